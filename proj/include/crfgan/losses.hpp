#pragma once

#include "crfgan/autograd.hpp"
#include "crfgan/netspec.hpp"
#include "crfgan/volume.hpp"

namespace crfgan {

// Per-step scalars reported by the trainer. Score-valued diagnostics stay in
// (0,1); every field must be finite.
struct LossBundle {
    double d_and_crf_loss = 0.0;  // max player, negated for minimization
    double g_loss = 0.0;
    double recon_loss = 0.0;
    double d_real = 0.0, d_fake = 0.0;
    double crf_real = 0.0, crf_fake = 0.0;

    bool finite() const;
};

// Plain-value forms (scores already clamped to (eps, 1-eps)).
// loss_d = -[log d_real + log(1 - d_fake)]; loss_g is the non-saturating
// -log d_fake.
std::pair<double, double> gan_loss(double d_real, double d_fake);

// Scores from D and the CRF head are averaged before the log in both the
// real and fake terms; with crf scores pinned to the d scores this reduces
// exactly to gan_loss.
std::pair<double, double> crfgan_loss(double d_real, double d_fake, double crf_real,
                                      double crf_fake);

// Mean absolute voxel difference.
double reconstruct_loss(const Volume3D& x, const Volume3D& x_hat);

// Tape forms used for training; score vars must be scalars in (eps, 1-eps).
Var gan_loss_d_var(Tape& t, Var d_real, Var d_fake);
Var gan_loss_g_var(Tape& t, Var d_fake);
Var crfgan_loss_max_var(Tape& t, Var d_real, Var d_fake, Var crf_real, Var crf_fake);
Var crfgan_loss_g_var(Tape& t, Var d_fake, Var crf_fake);
Var reconstruct_loss_var(Tape& t, Var x, Var x_hat);

}  // namespace crfgan
