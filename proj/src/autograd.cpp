#include "crfgan/autograd.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <memory>

namespace crfgan {
namespace ops {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ColMat = Eigen::MatrixXd;

namespace {

void check(bool cond, const char* msg) {
    if (!cond) throw std::runtime_error(msg);
}

}  // namespace

Var constant(Tape& t, Tensor x) { return t.push(std::move(x)); }

// Backward closures need their own node id to read the output gradient; the
// id is only known after push, so route it through a shared holder.
static Var push_with_back(Tape& t, Tensor outv,
                          const std::function<void(Tape&, Var)>& back) {
    auto holder = std::make_shared<Var>();
    Var out = t.push(std::move(outv), [holder, back](Tape& tp) { back(tp, *holder); });
    *holder = out;
    return out;
}

Var add(Tape& t, Var a, Var b) {
    check(t.val(a).same_shape(t.val(b)), "add: shape mismatch");
    Tensor out = t.val(a);
    const Tensor& bv = t.val(b);
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return push_with_back(t, std::move(out), [a, b](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        Tensor& ga = tp.grad(a);
        Tensor& gb = tp.grad(b);
        for (std::int64_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i];
            gb[i] += g[i];
        }
    });
}

Var sub(Tape& t, Var a, Var b) {
    check(t.val(a).same_shape(t.val(b)), "sub: shape mismatch");
    Tensor out = t.val(a);
    const Tensor& bv = t.val(b);
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    return push_with_back(t, std::move(out), [a, b](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        Tensor& ga = tp.grad(a);
        Tensor& gb = tp.grad(b);
        for (std::int64_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i];
            gb[i] -= g[i];
        }
    });
}

Var mul(Tape& t, Var a, Var b) {
    check(t.val(a).same_shape(t.val(b)), "mul: shape mismatch");
    Tensor out = t.val(a);
    const Tensor& bv = t.val(b);
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    return push_with_back(t, std::move(out), [a, b](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        const Tensor& av = tp.val(a);
        const Tensor& bv2 = tp.val(b);
        Tensor& ga = tp.grad(a);
        Tensor& gb = tp.grad(b);
        for (std::int64_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i] * bv2[i];
            gb[i] += g[i] * av[i];
        }
    });
}

Var neg(Tape& t, Var a) { return scale(t, a, -1.0); }

Var scale(Tape& t, Var a, double c) {
    Tensor out = t.val(a);
    for (double& x : out.v) x *= c;
    return push_with_back(t, std::move(out), [a, c](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        Tensor& ga = tp.grad(a);
        for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
    });
}

Var add_scalar(Tape& t, Var a, double c) {
    Tensor out = t.val(a);
    for (double& x : out.v) x += c;
    return push_with_back(t, std::move(out), [a](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        Tensor& ga = tp.grad(a);
        for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

Var scale_by(Tape& t, Var a, Var s) {
    check(t.val(s).size() == 1, "scale_by: scalar expected");
    const double c = t.val(s)[0];
    Tensor out = t.val(a);
    for (double& x : out.v) x *= c;
    return push_with_back(t, std::move(out), [a, s](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        const Tensor& av = tp.val(a);
        const double c2 = tp.val(s)[0];
        Tensor& ga = tp.grad(a);
        double ds = 0.0;
        for (std::int64_t i = 0; i < g.size(); ++i) {
            ga[i] += c2 * g[i];
            ds += g[i] * av[i];
        }
        tp.grad(s)[0] += ds;
    });
}

Var exp_(Tape& t, Var a) {
    Tensor out = t.val(a);
    for (double& x : out.v) x = std::exp(x);
    return push_with_back(t, std::move(out), [a](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        const Tensor& y = tp.val(self);
        Tensor& ga = tp.grad(a);
        for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
    });
}

Var log_(Tape& t, Var a) {
    Tensor out = t.val(a);
    for (double& x : out.v) x = std::log(x);
    return push_with_back(t, std::move(out), [a](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        const Tensor& xv = tp.val(a);
        Tensor& ga = tp.grad(a);
        for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] / xv[i];
    });
}

Var tanh_(Tape& t, Var a) {
    Tensor out = t.val(a);
    for (double& x : out.v) x = std::tanh(x);
    return push_with_back(t, std::move(out), [a](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        const Tensor& y = tp.val(self);
        Tensor& ga = tp.grad(a);
        for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
    });
}

Var sigmoid_(Tape& t, Var a) {
    Tensor out = t.val(a);
    for (double& x : out.v) x = 1.0 / (1.0 + std::exp(-x));
    return push_with_back(t, std::move(out), [a](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        const Tensor& y = tp.val(self);
        Tensor& ga = tp.grad(a);
        for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
    });
}

Var leaky_relu(Tape& t, Var a, double slope) {
    Tensor out = t.val(a);
    for (double& x : out.v) x = x >= 0.0 ? x : slope * x;
    return push_with_back(t, std::move(out), [a, slope](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        const Tensor& xv = tp.val(a);
        Tensor& ga = tp.grad(a);
        for (std::int64_t i = 0; i < g.size(); ++i)
            ga[i] += g[i] * (xv[i] >= 0.0 ? 1.0 : slope);
    });
}

Var abs_(Tape& t, Var a) {
    Tensor out = t.val(a);
    for (double& x : out.v) x = std::fabs(x);
    return push_with_back(t, std::move(out), [a](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        const Tensor& xv = tp.val(a);
        Tensor& ga = tp.grad(a);
        for (std::int64_t i = 0; i < g.size(); ++i)
            ga[i] += g[i] * (xv[i] > 0.0 ? 1.0 : (xv[i] < 0.0 ? -1.0 : 0.0));
    });
}

Var clamp(Tape& t, Var a, double lo, double hi) {
    Tensor out = t.val(a);
    for (double& x : out.v) x = std::min(hi, std::max(lo, x));
    return push_with_back(t, std::move(out), [a, lo, hi](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        const Tensor& xv = tp.val(a);
        Tensor& ga = tp.grad(a);
        for (std::int64_t i = 0; i < g.size(); ++i)
            if (xv[i] > lo && xv[i] < hi) ga[i] += g[i];
    });
}

Var sum(Tape& t, Var a) {
    double s = 0.0;
    for (double x : t.val(a).v) s += x;
    return push_with_back(t, Tensor::scalar(s), [a](Tape& tp, Var self) {
        const double g = tp.grad(self)[0];
        Tensor& ga = tp.grad(a);
        for (std::int64_t i = 0; i < ga.size(); ++i) ga[i] += g;
    });
}

Var mean(Tape& t, Var a) {
    const std::int64_t n = t.val(a).size();
    double s = 0.0;
    for (double x : t.val(a).v) s += x;
    return push_with_back(t, Tensor::scalar(s / static_cast<double>(n)),
                          [a, n](Tape& tp, Var self) {
                              const double g = tp.grad(self)[0] / static_cast<double>(n);
                              Tensor& ga = tp.grad(a);
                              for (std::int64_t i = 0; i < ga.size(); ++i) ga[i] += g;
                          });
}

Var reshape(Tape& t, Var a, std::vector<int> shape) {
    check(Tensor::numel(shape) == t.val(a).size(), "reshape: numel mismatch");
    Tensor out(std::move(shape), t.val(a).v);
    return push_with_back(t, std::move(out), [a](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        Tensor& ga = tp.grad(a);
        for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

namespace {
// Decompose a shape around `axis` into (outer, extent, inner) strides.
struct AxisSplit {
    std::int64_t outer = 1, extent = 1, inner = 1;
};
AxisSplit split_axis(const std::vector<int>& shape, int axis) {
    AxisSplit s;
    for (int i = 0; i < static_cast<int>(shape.size()); ++i) {
        if (i < axis)
            s.outer *= shape[i];
        else if (i == axis)
            s.extent = shape[i];
        else
            s.inner *= shape[i];
    }
    return s;
}
}  // namespace

Var slice(Tape& t, Var a, int axis, int start, int len) {
    const Tensor& x = t.val(a);
    check(axis >= 0 && axis < static_cast<int>(x.shape.size()), "slice: bad axis");
    check(start >= 0 && len >= 1 && start + len <= x.shape[axis], "slice: out of range");
    AxisSplit s = split_axis(x.shape, axis);
    std::vector<int> oshape = x.shape;
    oshape[axis] = len;
    Tensor out(oshape);
    for (std::int64_t o = 0; o < s.outer; ++o)
        for (int e = 0; e < len; ++e)
            std::copy_n(&x.v[(o * s.extent + start + e) * s.inner], s.inner,
                        &out.v[(o * len + e) * s.inner]);
    return push_with_back(t, std::move(out), [a, axis, start, len, s](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        Tensor& ga = tp.grad(a);
        for (std::int64_t o = 0; o < s.outer; ++o)
            for (int e = 0; e < len; ++e) {
                const double* src = &g.v[(o * len + e) * s.inner];
                double* dst = &ga.v[(o * s.extent + start + e) * s.inner];
                for (std::int64_t i = 0; i < s.inner; ++i) dst[i] += src[i];
            }
    });
}

Var concat(Tape& t, int axis, const std::vector<Var>& parts) {
    check(!parts.empty(), "concat: empty");
    std::vector<int> oshape = t.val(parts[0]).shape;
    check(axis >= 0 && axis < static_cast<int>(oshape.size()), "concat: bad axis");
    int total = 0;
    for (Var p : parts) {
        const auto& s = t.val(p).shape;
        for (int i = 0; i < static_cast<int>(s.size()); ++i)
            check(i == axis || s[i] == oshape[i], "concat: shape mismatch");
        total += s[axis];
    }
    oshape[axis] = total;
    AxisSplit so = split_axis(oshape, axis);
    Tensor out(oshape);
    std::vector<int> extents, offsets;
    int off = 0;
    for (Var p : parts) {
        int e = t.val(p).shape[axis];
        extents.push_back(e);
        offsets.push_back(off);
        const Tensor& x = t.val(p);
        for (std::int64_t o = 0; o < so.outer; ++o)
            std::copy_n(&x.v[o * e * so.inner], e * so.inner,
                        &out.v[(o * total + off) * so.inner]);
        off += e;
    }
    auto parts_copy = parts;
    return push_with_back(
        t, std::move(out), [parts_copy, extents, offsets, so, total](Tape& tp, Var self) {
            const Tensor& g = tp.grad(self);
            for (std::size_t k = 0; k < parts_copy.size(); ++k) {
                Tensor& gp = tp.grad(parts_copy[k]);
                const int e = extents[k];
                for (std::int64_t o = 0; o < so.outer; ++o) {
                    const double* src = &g.v[(o * total + offsets[k]) * so.inner];
                    double* dst = &gp.v[o * e * so.inner];
                    for (std::int64_t i = 0; i < e * so.inner; ++i) dst[i] += src[i];
                }
            }
        });
}

Var set_row(Tape& t, Var m, int row, Var r) {
    const Tensor& mv = t.val(m);
    check(mv.shape.size() == 2, "set_row: 2-D expected");
    const int cols = mv.shape[1];
    check(t.val(r).size() == cols, "set_row: row size mismatch");
    Tensor out = mv;
    std::copy_n(t.val(r).v.data(), cols, &out.v[static_cast<std::int64_t>(row) * cols]);
    return push_with_back(t, std::move(out), [m, r, row, cols](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        Tensor& gm = tp.grad(m);
        Tensor& gr = tp.grad(r);
        for (std::int64_t i = 0; i < g.size(); ++i) {
            const std::int64_t rr = i / cols;
            if (rr == row)
                gr[i - static_cast<std::int64_t>(row) * cols] += g[i];
            else
                gm[i] += g[i];
        }
    });
}

Var matmul(Tape& t, Var a, Var b) {
    const Tensor& av = t.val(a);
    const Tensor& bv = t.val(b);
    check(av.shape.size() == 2 && bv.shape.size() == 2 && av.shape[1] == bv.shape[0],
          "matmul: shape mismatch");
    const int m = av.shape[0], k = av.shape[1], n = bv.shape[1];
    Tensor out({m, n});
    Eigen::Map<const RowMat> A(av.v.data(), m, k), B(bv.v.data(), k, n);
    Eigen::Map<RowMat>(out.v.data(), m, n) = A * B;
    return push_with_back(t, std::move(out), [a, b, m, k, n](Tape& tp, Var self) {
        Eigen::Map<const RowMat> G(tp.grad(self).v.data(), m, n);
        Eigen::Map<const RowMat> A2(tp.val(a).v.data(), m, k);
        Eigen::Map<const RowMat> B2(tp.val(b).v.data(), k, n);
        Eigen::Map<RowMat>(tp.grad(a).v.data(), m, k) += G * B2.transpose();
        Eigen::Map<RowMat>(tp.grad(b).v.data(), k, n) += A2.transpose() * G;
    });
}

Var add_rowvec(Tape& t, Var m, Var v) {
    const Tensor& mv = t.val(m);
    check(mv.shape.size() == 2 && t.val(v).size() == mv.shape[1], "add_rowvec: shape");
    const int rows = mv.shape[0], cols = mv.shape[1];
    Tensor out = mv;
    const Tensor& vv = t.val(v);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) out.v[static_cast<std::int64_t>(r) * cols + c] += vv[c];
    return push_with_back(t, std::move(out), [m, v, rows, cols](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        Tensor& gm = tp.grad(m);
        Tensor& gv = tp.grad(v);
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) {
                const double gg = g[static_cast<std::int64_t>(r) * cols + c];
                gm[static_cast<std::int64_t>(r) * cols + c] += gg;
                gv[c] += gg;
            }
    });
}

Var softmax_rows(Tape& t, Var m) {
    const Tensor& mv = t.val(m);
    check(mv.shape.size() == 2, "softmax_rows: 2-D expected");
    const int rows = mv.shape[0], cols = mv.shape[1];
    Tensor out = mv;
    for (int r = 0; r < rows; ++r) {
        double mx = -1e300, s = 0.0;
        double* row = &out.v[static_cast<std::int64_t>(r) * cols];
        for (int c = 0; c < cols; ++c) mx = std::max(mx, row[c]);
        for (int c = 0; c < cols; ++c) {
            row[c] = std::exp(row[c] - mx);
            s += row[c];
        }
        for (int c = 0; c < cols; ++c) row[c] /= s;
    }
    return push_with_back(t, std::move(out), [m, rows, cols](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        const Tensor& y = tp.val(self);
        Tensor& gm = tp.grad(m);
        for (int r = 0; r < rows; ++r) {
            const double* gr = &g.v[static_cast<std::int64_t>(r) * cols];
            const double* yr = &y.v[static_cast<std::int64_t>(r) * cols];
            double dot = 0.0;
            for (int c = 0; c < cols; ++c) dot += gr[c] * yr[c];
            double* dst = &gm.v[static_cast<std::int64_t>(r) * cols];
            for (int c = 0; c < cols; ++c) dst[c] += yr[c] * (gr[c] - dot);
        }
    });
}

namespace {

struct ConvDims {
    int cin, d, h, w;
    int cout, kd, kh, kw;
    int sd, sh, sw, pd, ph, pw;
    int od, oh, ow;
    std::int64_t nout() const { return static_cast<std::int64_t>(od) * oh * ow; }
    std::int64_t krows() const { return static_cast<std::int64_t>(cin) * kd * kh * kw; }
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, std::array<int, 3> stride,
                   std::array<int, 3> pad) {
    check(x.shape.size() == 4 && w.shape.size() == 5, "conv3d: rank");
    check(x.shape[0] == w.shape[1], "conv3d: channel mismatch");
    ConvDims c{};
    c.cin = x.shape[0];
    c.d = x.shape[1];
    c.h = x.shape[2];
    c.w = x.shape[3];
    c.cout = w.shape[0];
    c.kd = w.shape[2];
    c.kh = w.shape[3];
    c.kw = w.shape[4];
    c.sd = stride[0];
    c.sh = stride[1];
    c.sw = stride[2];
    c.pd = pad[0];
    c.ph = pad[1];
    c.pw = pad[2];
    c.od = (c.d + 2 * c.pd - c.kd) / c.sd + 1;
    c.oh = (c.h + 2 * c.ph - c.kh) / c.sh + 1;
    c.ow = (c.w + 2 * c.pw - c.kw) / c.sw + 1;
    check(c.od >= 1 && c.oh >= 1 && c.ow >= 1, "conv3d: empty output");
    return c;
}

// im2col for output columns [n0, n1) into a column-major matrix.
void im2col_chunk(const ConvDims& cd, const double* x, std::int64_t n0, std::int64_t n1,
                  ColMat& K) {
    const std::int64_t cols = n1 - n0;
    K.resize(cd.krows(), cols);
    const std::int64_t plane = static_cast<std::int64_t>(cd.h) * cd.w;
    const std::int64_t chan = static_cast<std::int64_t>(cd.d) * plane;
    for (std::int64_t n = n0; n < n1; ++n) {
        const int ow = static_cast<int>(n % cd.ow);
        const int oh = static_cast<int>((n / cd.ow) % cd.oh);
        const int od = static_cast<int>(n / (static_cast<std::int64_t>(cd.ow) * cd.oh));
        double* col = K.data() + (n - n0) * K.rows();
        std::int64_t r = 0;
        for (int ci = 0; ci < cd.cin; ++ci) {
            const double* xc = x + ci * chan;
            for (int kz = 0; kz < cd.kd; ++kz) {
                const int iz = od * cd.sd - cd.pd + kz;
                for (int ky = 0; ky < cd.kh; ++ky) {
                    const int iy = oh * cd.sh - cd.ph + ky;
                    const bool inplane = iz >= 0 && iz < cd.d && iy >= 0 && iy < cd.h;
                    for (int kx = 0; kx < cd.kw; ++kx, ++r) {
                        const int ix = ow * cd.sw - cd.pw + kx;
                        col[r] = (inplane && ix >= 0 && ix < cd.w)
                                     ? xc[static_cast<std::int64_t>(iz) * plane + iy * cd.w + ix]
                                     : 0.0;
                    }
                }
            }
        }
    }
}

void col2im_chunk(const ConvDims& cd, const ColMat& K, std::int64_t n0, std::int64_t n1,
                  double* gx) {
    const std::int64_t plane = static_cast<std::int64_t>(cd.h) * cd.w;
    const std::int64_t chan = static_cast<std::int64_t>(cd.d) * plane;
    for (std::int64_t n = n0; n < n1; ++n) {
        const int ow = static_cast<int>(n % cd.ow);
        const int oh = static_cast<int>((n / cd.ow) % cd.oh);
        const int od = static_cast<int>(n / (static_cast<std::int64_t>(cd.ow) * cd.oh));
        const double* col = K.data() + (n - n0) * K.rows();
        std::int64_t r = 0;
        for (int ci = 0; ci < cd.cin; ++ci) {
            double* xc = gx + ci * chan;
            for (int kz = 0; kz < cd.kd; ++kz) {
                const int iz = od * cd.sd - cd.pd + kz;
                for (int ky = 0; ky < cd.kh; ++ky) {
                    const int iy = oh * cd.sh - cd.ph + ky;
                    const bool inplane = iz >= 0 && iz < cd.d && iy >= 0 && iy < cd.h;
                    for (int kx = 0; kx < cd.kw; ++kx, ++r) {
                        const int ix = ow * cd.sw - cd.pw + kx;
                        if (inplane && ix >= 0 && ix < cd.w)
                            xc[static_cast<std::int64_t>(iz) * plane + iy * cd.w + ix] += col[r];
                    }
                }
            }
        }
    }
}

std::int64_t conv_chunk_cols(const ConvDims& cd) {
    // Cap the im2col buffer around 32 MB.
    const std::int64_t budget = (32ll << 20) / 8;
    return std::max<std::int64_t>(64, budget / std::max<std::int64_t>(1, cd.krows()));
}

}  // namespace

Var conv3d(Tape& t, Var x, Var w, Var b, std::array<int, 3> stride, std::array<int, 3> pad) {
    const ConvDims cd = conv_dims(t.val(x), t.val(w), stride, pad);
    check(t.val(b).size() == cd.cout, "conv3d: bias size");
    Tensor out({cd.cout, cd.od, cd.oh, cd.ow});
    const std::int64_t nout = cd.nout();
    Eigen::Map<const RowMat> W(t.val(w).v.data(), cd.cout, cd.krows());
    Eigen::Map<RowMat> O(out.v.data(), cd.cout, nout);
    ColMat K;
    const std::int64_t chunk = conv_chunk_cols(cd);
    for (std::int64_t n0 = 0; n0 < nout; n0 += chunk) {
        const std::int64_t n1 = std::min(nout, n0 + chunk);
        im2col_chunk(cd, t.val(x).v.data(), n0, n1, K);
        O.middleCols(n0, n1 - n0) = W * K;
    }
    const Tensor& bv = t.val(b);
    for (int co = 0; co < cd.cout; ++co) O.row(co).array() += bv[co];
    return push_with_back(t, std::move(out), [x, w, b, cd](Tape& tp, Var self) {
        const std::int64_t nout = cd.nout();
        Eigen::Map<const RowMat> G(tp.grad(self).v.data(), cd.cout, nout);
        Eigen::Map<const RowMat> W2(tp.val(w).v.data(), cd.cout, cd.krows());
        Eigen::Map<RowMat> GW(tp.grad(w).v.data(), cd.cout, cd.krows());
        Tensor& gb = tp.grad(b);
        for (int co = 0; co < cd.cout; ++co) gb[co] += G.row(co).sum();
        Tensor& gx = tp.grad(x);
        ColMat K, GK;
        const std::int64_t chunk = conv_chunk_cols(cd);
        for (std::int64_t n0 = 0; n0 < nout; n0 += chunk) {
            const std::int64_t n1 = std::min(nout, n0 + chunk);
            im2col_chunk(cd, tp.val(x).v.data(), n0, n1, K);
            GW += G.middleCols(n0, n1 - n0) * K.transpose();
            GK.noalias() = W2.transpose() * G.middleCols(n0, n1 - n0);
            col2im_chunk(cd, GK, n0, n1, gx.v.data());
        }
    });
}

Var upsample_nearest3(Tape& t, Var x, int factor) {
    const Tensor& xv = t.val(x);
    check(xv.shape.size() == 4, "upsample: rank");
    const int c = xv.shape[0], d = xv.shape[1], h = xv.shape[2], w = xv.shape[3];
    const int f = factor;
    Tensor out({c, d * f, h * f, w * f});
    const std::int64_t iplane = static_cast<std::int64_t>(h) * w;
    const std::int64_t oplane = static_cast<std::int64_t>(h * f) * (w * f);
    for (int ci = 0; ci < c; ++ci)
        for (int oz = 0; oz < d * f; ++oz)
            for (int oy = 0; oy < h * f; ++oy) {
                const double* src =
                    &xv.v[(static_cast<std::int64_t>(ci) * d + oz / f) * iplane + (oy / f) * w];
                double* dst = &out.v[(static_cast<std::int64_t>(ci) * d * f + oz) * oplane +
                                     static_cast<std::int64_t>(oy) * (w * f)];
                for (int ox = 0; ox < w * f; ++ox) dst[ox] = src[ox / f];
            }
    return push_with_back(t, std::move(out), [x, c, d, h, w, f](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        Tensor& gx = tp.grad(x);
        const std::int64_t iplane = static_cast<std::int64_t>(h) * w;
        const std::int64_t oplane = static_cast<std::int64_t>(h * f) * (w * f);
        for (int ci = 0; ci < c; ++ci)
            for (int oz = 0; oz < d * f; ++oz)
                for (int oy = 0; oy < h * f; ++oy) {
                    const double* src = &g.v[(static_cast<std::int64_t>(ci) * d * f + oz) * oplane +
                                             static_cast<std::int64_t>(oy) * (w * f)];
                    double* dst =
                        &gx.v[(static_cast<std::int64_t>(ci) * d + oz / f) * iplane + (oy / f) * w];
                    for (int ox = 0; ox < w * f; ++ox) dst[ox / f] += src[ox];
                }
    });
}

Var avgpool3(Tape& t, Var x, int factor) {
    const Tensor& xv = t.val(x);
    check(xv.shape.size() == 4, "avgpool: rank");
    const int c = xv.shape[0], d = xv.shape[1], h = xv.shape[2], w = xv.shape[3];
    const int f = factor;
    check(d % f == 0 && h % f == 0 && w % f == 0, "avgpool: not divisible");
    const int od = d / f, oh = h / f, ow = w / f;
    const double inv = 1.0 / (static_cast<double>(f) * f * f);
    Tensor out({c, od, oh, ow});
    for (int ci = 0; ci < c; ++ci)
        for (int oz = 0; oz < od; ++oz)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    double s = 0.0;
                    for (int kz = 0; kz < f; ++kz)
                        for (int ky = 0; ky < f; ++ky)
                            for (int kx = 0; kx < f; ++kx)
                                s += xv.v[((static_cast<std::int64_t>(ci) * d + oz * f + kz) * h +
                                           oy * f + ky) *
                                              w +
                                          ox * f + kx];
                    out.v[((static_cast<std::int64_t>(ci) * od + oz) * oh + oy) * ow + ox] =
                        s * inv;
                }
    return push_with_back(t, std::move(out), [x, c, d, h, w, f](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        Tensor& gx = tp.grad(x);
        const int od = d / f, oh = h / f, ow = w / f;
        const double inv = 1.0 / (static_cast<double>(f) * f * f);
        for (int ci = 0; ci < c; ++ci)
            for (int oz = 0; oz < od; ++oz)
                for (int oy = 0; oy < oh; ++oy)
                    for (int ox = 0; ox < ow; ++ox) {
                        const double gg =
                            g.v[((static_cast<std::int64_t>(ci) * od + oz) * oh + oy) * ow + ox] *
                            inv;
                        for (int kz = 0; kz < f; ++kz)
                            for (int ky = 0; ky < f; ++ky)
                                for (int kx = 0; kx < f; ++kx)
                                    gx.v[((static_cast<std::int64_t>(ci) * d + oz * f + kz) * h +
                                          oy * f + ky) *
                                             w +
                                         ox * f + kx] += gg;
                    }
    });
}

Var global_avgpool(Tape& t, Var x) {
    const Tensor& xv = t.val(x);
    check(xv.shape.size() == 4, "global_avgpool: rank");
    const int c = xv.shape[0];
    const std::int64_t n = static_cast<std::int64_t>(xv.shape[1]) * xv.shape[2] * xv.shape[3];
    Tensor out({c});
    for (int ci = 0; ci < c; ++ci) {
        double s = 0.0;
        for (std::int64_t i = 0; i < n; ++i) s += xv.v[ci * n + i];
        out[ci] = s / static_cast<double>(n);
    }
    return push_with_back(t, std::move(out), [x, c, n](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        Tensor& gx = tp.grad(x);
        for (int ci = 0; ci < c; ++ci) {
            const double gg = g[ci] / static_cast<double>(n);
            for (std::int64_t i = 0; i < n; ++i) gx.v[ci * n + i] += gg;
        }
    });
}

Var instance_norm(Tape& t, Var x, Var gamma, Var beta, double eps) {
    const Tensor& xv = t.val(x);
    check(xv.shape.size() == 4, "instance_norm: rank");
    const int c = xv.shape[0];
    const std::int64_t n = static_cast<std::int64_t>(xv.shape[1]) * xv.shape[2] * xv.shape[3];
    check(t.val(gamma).size() == c && t.val(beta).size() == c, "instance_norm: affine size");
    Tensor out = xv;
    auto stats = std::make_shared<std::vector<double>>(2 * c);  // mean, invstd per channel
    const Tensor& gv = t.val(gamma);
    const Tensor& bv = t.val(beta);
    for (int ci = 0; ci < c; ++ci) {
        double mu = 0.0;
        for (std::int64_t i = 0; i < n; ++i) mu += xv.v[ci * n + i];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::int64_t i = 0; i < n; ++i) {
            const double dlt = xv.v[ci * n + i] - mu;
            var += dlt * dlt;
        }
        var /= static_cast<double>(n);
        const double inv = 1.0 / std::sqrt(var + eps);
        (*stats)[2 * ci] = mu;
        (*stats)[2 * ci + 1] = inv;
        for (std::int64_t i = 0; i < n; ++i)
            out.v[ci * n + i] = gv[ci] * (xv.v[ci * n + i] - mu) * inv + bv[ci];
    }
    return push_with_back(t, std::move(out), [x, gamma, beta, c, n, stats](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        const Tensor& xv2 = tp.val(x);
        const Tensor& gv2 = tp.val(gamma);
        Tensor& gx = tp.grad(x);
        Tensor& gg = tp.grad(gamma);
        Tensor& gb = tp.grad(beta);
        for (int ci = 0; ci < c; ++ci) {
            const double mu = (*stats)[2 * ci], inv = (*stats)[2 * ci + 1];
            double sum_g = 0.0, sum_gxh = 0.0;
            for (std::int64_t i = 0; i < n; ++i) {
                const double xh = (xv2.v[ci * n + i] - mu) * inv;
                sum_g += g.v[ci * n + i];
                sum_gxh += g.v[ci * n + i] * xh;
            }
            gg[ci] += sum_gxh;
            gb[ci] += sum_g;
            const double mg = sum_g / static_cast<double>(n);
            const double mgxh = sum_gxh / static_cast<double>(n);
            for (std::int64_t i = 0; i < n; ++i) {
                const double xh = (xv2.v[ci * n + i] - mu) * inv;
                gx.v[ci * n + i] += gv2[ci] * inv * (g.v[ci * n + i] - mg - xh * mgxh);
            }
        }
    });
}

Var pixel_norm(Tape& t, Var x, double eps) {
    const Tensor& xv = t.val(x);
    check(xv.shape.size() == 4, "pixel_norm: rank");
    const int c = xv.shape[0];
    const std::int64_t n = static_cast<std::int64_t>(xv.shape[1]) * xv.shape[2] * xv.shape[3];
    Tensor out = xv;
    auto invs = std::make_shared<std::vector<double>>(n);
    for (std::int64_t i = 0; i < n; ++i) {
        double m = 0.0;
        for (int ci = 0; ci < c; ++ci) m += xv.v[ci * n + i] * xv.v[ci * n + i];
        const double inv = 1.0 / std::sqrt(m / c + eps);
        (*invs)[i] = inv;
        for (int ci = 0; ci < c; ++ci) out.v[ci * n + i] *= inv;
    }
    return push_with_back(t, std::move(out), [x, c, n, invs](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        const Tensor& xv2 = tp.val(x);
        Tensor& gx = tp.grad(x);
        for (std::int64_t i = 0; i < n; ++i) {
            const double inv = (*invs)[i];
            double dot = 0.0;
            for (int ci = 0; ci < c; ++ci) dot += g.v[ci * n + i] * xv2.v[ci * n + i];
            const double k = dot * inv * inv * inv / c;
            for (int ci = 0; ci < c; ++ci) gx.v[ci * n + i] += g.v[ci * n + i] * inv - xv2.v[ci * n + i] * k;
        }
    });
}

Var grid_to_rows(Tape& t, Var x) {
    const Tensor& xv = t.val(x);
    check(xv.shape.size() == 4, "grid_to_rows: rank");
    const int c = xv.shape[0];
    const std::int64_t n = static_cast<std::int64_t>(xv.shape[1]) * xv.shape[2] * xv.shape[3];
    Tensor out({static_cast<int>(n), c});
    for (int ci = 0; ci < c; ++ci)
        for (std::int64_t i = 0; i < n; ++i) out.v[i * c + ci] = xv.v[ci * n + i];
    return push_with_back(t, std::move(out), [x, c, n](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        Tensor& gx = tp.grad(x);
        for (int ci = 0; ci < c; ++ci)
            for (std::int64_t i = 0; i < n; ++i) gx.v[ci * n + i] += g.v[i * c + ci];
    });
}

Var pairwise_gaussian(Tape& t, Var x, Var theta) {
    const Tensor& xv = t.val(x);
    check(xv.shape.size() == 2, "pairwise_gaussian: (N,C) expected");
    check(t.val(theta).size() == 1, "pairwise_gaussian: scalar theta");
    const int n = xv.shape[0], c = xv.shape[1];
    const double th = t.val(theta)[0];
    const double denom = 2.0 * th * th;
    Tensor out({n, n});
    for (int i = 0; i < n; ++i) {
        out.v[static_cast<std::int64_t>(i) * n + i] = 0.0;
        for (int j = i + 1; j < n; ++j) {
            double d2 = 0.0;
            for (int k = 0; k < c; ++k) {
                const double dlt = xv.v[static_cast<std::int64_t>(i) * c + k] -
                                   xv.v[static_cast<std::int64_t>(j) * c + k];
                d2 += dlt * dlt;
            }
            const double kv = std::exp(-d2 / denom);
            out.v[static_cast<std::int64_t>(i) * n + j] = kv;
            out.v[static_cast<std::int64_t>(j) * n + i] = kv;
        }
    }
    return push_with_back(t, std::move(out), [x, theta, n, c](Tape& tp, Var self) {
        const Tensor& g = tp.grad(self);
        const Tensor& k = tp.val(self);
        const Tensor& xv2 = tp.val(x);
        const double th2 = tp.val(theta)[0];
        Tensor& gx = tp.grad(x);
        double gth = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                if (i == j) continue;
                const double gk = g.v[static_cast<std::int64_t>(i) * n + j];
                if (gk == 0.0) continue;
                const double kv = k.v[static_cast<std::int64_t>(i) * n + j];
                double d2 = 0.0;
                for (int q = 0; q < c; ++q) {
                    const double dlt = xv2.v[static_cast<std::int64_t>(i) * c + q] -
                                       xv2.v[static_cast<std::int64_t>(j) * c + q];
                    d2 += dlt * dlt;
                }
                gth += gk * kv * d2 / (th2 * th2 * th2);
                const double coef = gk * kv / (th2 * th2);
                for (int q = 0; q < c; ++q) {
                    const double dlt = xv2.v[static_cast<std::int64_t>(j) * c + q] -
                                       xv2.v[static_cast<std::int64_t>(i) * c + q];
                    gx.v[static_cast<std::int64_t>(i) * c + q] += coef * dlt;
                    gx.v[static_cast<std::int64_t>(j) * c + q] -= coef * dlt;
                }
            }
        tp.grad(theta)[0] += gth;
    });
}

}  // namespace ops

std::vector<double> finite_difference(const std::function<double(const Tensor&)>& f,
                                      const Tensor& x, double step) {
    std::vector<double> g(x.size());
    Tensor xp = x;
    for (std::int64_t i = 0; i < x.size(); ++i) {
        const double orig = xp[i];
        xp[i] = orig + step;
        const double fp = f(xp);
        xp[i] = orig - step;
        const double fm = f(xp);
        xp[i] = orig;
        g[i] = (fp - fm) / (2.0 * step);
    }
    return g;
}

}  // namespace crfgan
