#include "crfgan/losses.hpp"

#include <cmath>

#include "crfgan/crf.hpp"

namespace crfgan {

namespace {

void check_score(double s, const char* what) {
    if (!(s >= kScoreEps && s <= 1.0 - kScoreEps))
        throw NumericError(std::string(what) + ": score outside the (eps, 1-eps) clamp");
}

double avg_clamped(double a, double b) {
    const double s = 0.5 * (a + b);
    return std::min(1.0 - kScoreEps, std::max(kScoreEps, s));
}

}  // namespace

bool LossBundle::finite() const {
    for (double v : {d_and_crf_loss, g_loss, recon_loss, d_real, d_fake, crf_real, crf_fake})
        if (!std::isfinite(v)) return false;
    return true;
}

std::pair<double, double> gan_loss(double d_real, double d_fake) {
    check_score(d_real, "gan_loss");
    check_score(d_fake, "gan_loss");
    const double loss_d = -(std::log(d_real) + std::log(1.0 - d_fake));
    const double loss_g = -std::log(d_fake);
    return {loss_d, loss_g};
}

std::pair<double, double> crfgan_loss(double d_real, double d_fake, double crf_real,
                                      double crf_fake) {
    check_score(d_real, "crfgan_loss");
    check_score(d_fake, "crfgan_loss");
    check_score(crf_real, "crfgan_loss");
    check_score(crf_fake, "crfgan_loss");
    const double real = avg_clamped(d_real, crf_real);
    const double fake = avg_clamped(d_fake, crf_fake);
    const double loss_max = -(std::log(real) + std::log(1.0 - fake));
    const double loss_g = -std::log(fake);
    return {loss_max, loss_g};
}

double reconstruct_loss(const Volume3D& x, const Volume3D& x_hat) {
    if (x.shape != x_hat.shape) throw GeometryError("reconstruct_loss: shape mismatch");
    double s = 0.0;
    for (std::int64_t i = 0; i < x.size(); ++i)
        s += std::fabs(static_cast<double>(x.voxels[i]) - static_cast<double>(x_hat.voxels[i]));
    return s / static_cast<double>(x.size());
}

Var gan_loss_d_var(Tape& t, Var d_real, Var d_fake) {
    Var term_real = ops::log_(t, d_real);
    Var term_fake = ops::log_(t, ops::add_scalar(t, ops::neg(t, d_fake), 1.0));
    return ops::neg(t, ops::add(t, term_real, term_fake));
}

Var gan_loss_g_var(Tape& t, Var d_fake) { return ops::neg(t, ops::log_(t, d_fake)); }

namespace {
Var averaged_score(Tape& t, Var a, Var b) {
    return ops::clamp(t, ops::scale(t, ops::add(t, a, b), 0.5), kScoreEps, 1.0 - kScoreEps);
}
}  // namespace

Var crfgan_loss_max_var(Tape& t, Var d_real, Var d_fake, Var crf_real, Var crf_fake) {
    Var real = averaged_score(t, d_real, crf_real);
    Var fake = averaged_score(t, d_fake, crf_fake);
    Var term_real = ops::log_(t, real);
    Var term_fake = ops::log_(t, ops::add_scalar(t, ops::neg(t, fake), 1.0));
    return ops::neg(t, ops::add(t, term_real, term_fake));
}

Var crfgan_loss_g_var(Tape& t, Var d_fake, Var crf_fake) {
    return ops::neg(t, ops::log_(t, averaged_score(t, d_fake, crf_fake)));
}

Var reconstruct_loss_var(Tape& t, Var x, Var x_hat) {
    if (!(t.val(x).same_shape(t.val(x_hat))))
        throw GeometryError("reconstruct_loss: shape mismatch");
    return ops::mean(t, ops::abs_(t, ops::sub(t, x, x_hat)));
}

}  // namespace crfgan
