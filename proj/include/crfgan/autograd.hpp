#pragma once

#include <array>
#include <functional>
#include <stdexcept>
#include <vector>

#include "crfgan/tensor.hpp"

namespace crfgan {

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode tape. Values are stored per node; gradients are allocated
// lazily during backward(). Backward closures capture node ids only and
// read through the tape, so node-vector reallocation is safe.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var push(Tensor value, std::function<void(Tape&)> back = {}) {
        nodes_.push_back(Node{std::move(value), Tensor{}, std::move(back), false});
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    const Tensor& val(Var x) const { return nodes_[x.id].value; }

    // Accumulation target; allocates and marks the node live.
    Tensor& grad(Var x) {
        Node& n = nodes_[x.id];
        if (!n.touched) {
            n.grad = Tensor::zeros_like(n.value);
            n.touched = true;
        }
        return n.grad;
    }

    bool touched(Var x) const { return nodes_[x.id].touched; }

    // Gradient of a scalar output with respect to everything upstream.
    void backward(Var out) {
        if (val(out).size() != 1) throw std::runtime_error("backward: output must be scalar");
        grad(out)[0] = 1.0;
        for (int i = out.id; i >= 0; --i) {
            Node& n = nodes_[i];
            if (n.touched && n.back) n.back(*this);
        }
    }

    std::size_t num_nodes() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::function<void(Tape&)> back;
        bool touched;
    };
    std::vector<Node> nodes_;
};

namespace ops {

Var constant(Tape& t, Tensor x);

Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var neg(Tape& t, Var a);
Var scale(Tape& t, Var a, double c);
Var add_scalar(Tape& t, Var a, double c);
// Elementwise a * s where s is a scalar variable (shape {1}).
Var scale_by(Tape& t, Var a, Var s);

Var exp_(Tape& t, Var a);
Var log_(Tape& t, Var a);
Var tanh_(Tape& t, Var a);
Var sigmoid_(Tape& t, Var a);
Var leaky_relu(Tape& t, Var a, double slope);
Var abs_(Tape& t, Var a);
// Hard clamp; gradient passes only where the input is strictly inside.
Var clamp(Tape& t, Var a, double lo, double hi);

Var sum(Tape& t, Var a);
Var mean(Tape& t, Var a);

Var reshape(Tape& t, Var a, std::vector<int> shape);
Var slice(Tape& t, Var a, int axis, int start, int len);
Var concat(Tape& t, int axis, const std::vector<Var>& parts);
Var set_row(Tape& t, Var m, int row, Var r);  // functional row replacement on a 2-D tensor

Var matmul(Tape& t, Var a, Var b);            // (m,k) x (k,n)
Var add_rowvec(Tape& t, Var m, Var v);        // (m,n) + (n,) broadcast over rows
Var softmax_rows(Tape& t, Var m);             // per-row softmax of a 2-D tensor

// x: (Cin,D,H,W), w: (Cout,Cin,kd,kh,kw), b: (Cout)
Var conv3d(Tape& t, Var x, Var w, Var b, std::array<int, 3> stride, std::array<int, 3> pad);
Var upsample_nearest3(Tape& t, Var x, int factor);
Var avgpool3(Tape& t, Var x, int factor);
Var global_avgpool(Tape& t, Var x);  // (C,D,H,W) -> (C)

// Per-channel normalization over spatial positions, affine per channel.
Var instance_norm(Tape& t, Var x, Var gamma, Var beta, double eps = 1e-5);
// Per-position normalization over channels: x / sqrt(mean_c x^2 + eps).
// Local in space, so it does not couple distant voxels.
Var pixel_norm(Tape& t, Var x, double eps = 1e-8);

// (C,D,H,W) -> (D*H*W, C): one row per grid position.
Var grid_to_rows(Tape& t, Var x);

// X: (N,C), theta: scalar var. K_ij = exp(-|x_i-x_j|^2 / (2 theta^2)), K_ii = 0.
Var pairwise_gaussian(Tape& t, Var x, Var theta);

}  // namespace ops

// Central finite-difference gradient of f at x, for gradient-check tests.
std::vector<double> finite_difference(const std::function<double(const Tensor&)>& f,
                                      const Tensor& x, double step = 1e-4);

}  // namespace crfgan
