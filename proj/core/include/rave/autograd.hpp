#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "rave/dsp.hpp"
#include "rave/errors.hpp"
#include "rave/fft.hpp"
#include "rave/rng.hpp"

// Define-by-run reverse-mode autodiff over rank-3 tensors [batch, channel, time].
// Ops take a nullable Tape*: nullptr runs forward-only (inference), otherwise a
// backward closure is recorded when any input requires gradients. backward()
// replays the tape in reverse, accumulating into .g; repeated calls accumulate.
namespace rave::ag {

template <typename T>
struct TensorImpl {
    int b = 1, c = 1, t = 1;
    std::vector<T> v;
    std::vector<T> g;
    bool requires_grad = false;

    std::size_t size() const { return v.size(); }
    bool scalar() const { return b == 1 && c == 1 && t == 1; }
    void ensure_grad() {
        if (g.size() != v.size()) g.assign(v.size(), T(0));
    }
    void zero_grad() {
        if (!g.empty()) std::fill(g.begin(), g.end(), T(0));
    }
    T& at(int bi, int ci, int ti) {
        return v[(static_cast<std::size_t>(bi) * c + ci) * t + ti];
    }
    const T& at(int bi, int ci, int ti) const {
        return v[(static_cast<std::size_t>(bi) * c + ci) * t + ti];
    }
};

template <typename T>
using Var = std::shared_ptr<TensorImpl<T>>;

template <typename T>
Var<T> make_var(int b, int c, int t, bool requires_grad = false) {
    if (b < 1 || c < 1 || t < 1) throw ShapeError("tensor dims must be positive");
    auto v = std::make_shared<TensorImpl<T>>();
    v->b = b;
    v->c = c;
    v->t = t;
    v->v.assign(static_cast<std::size_t>(b) * c * t, T(0));
    v->requires_grad = requires_grad;
    if (requires_grad) v->ensure_grad();
    return v;
}

template <typename T>
Var<T> make_scalar(T value) {
    auto v = make_var<T>(1, 1, 1);
    v->v[0] = value;
    return v;
}

template <typename T>
class Tape {
  public:
    void record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }
    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    // Seeds d(loss)/d(loss) = 1 and replays recorded closures in reverse.
    void backward(const Var<T>& loss) {
        if (!loss->scalar()) throw ShapeError("backward expects a scalar loss");
        loss->ensure_grad();
        loss->g[0] += T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    }

  private:
    std::vector<std::function<void()>> nodes_;
};

namespace detail {

template <typename T>
inline bool same_shape(const Var<T>& a, const Var<T>& b) {
    return a->b == b->b && a->c == b->c && a->t == b->t;
}

template <typename T>
inline Var<T> make_out(int b, int c, int t, Tape<T>* tape, bool any_req) {
    Var<T> out = make_var<T>(b, c, t, tape != nullptr && any_req);
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename T>
Var<T> add(Tape<T>* tape, const Var<T>& a, const Var<T>& b) {
    if (!detail::same_shape(a, b)) throw ShapeError("add: shape mismatch");
    Var<T> out = detail::make_out<T>(a->b, a->c, a->t, tape, a->requires_grad || b->requires_grad);
    for (std::size_t i = 0; i < out->size(); ++i) out->v[i] = a->v[i] + b->v[i];
    if (out->requires_grad) {
        tape->record([a, b, out] {
            if (a->requires_grad) {
                a->ensure_grad();
                for (std::size_t i = 0; i < out->size(); ++i) a->g[i] += out->g[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (std::size_t i = 0; i < out->size(); ++i) b->g[i] += out->g[i];
            }
        });
    }
    return out;
}

template <typename T>
Var<T> sub(Tape<T>* tape, const Var<T>& a, const Var<T>& b) {
    if (!detail::same_shape(a, b)) throw ShapeError("sub: shape mismatch");
    Var<T> out = detail::make_out<T>(a->b, a->c, a->t, tape, a->requires_grad || b->requires_grad);
    for (std::size_t i = 0; i < out->size(); ++i) out->v[i] = a->v[i] - b->v[i];
    if (out->requires_grad) {
        tape->record([a, b, out] {
            if (a->requires_grad) {
                a->ensure_grad();
                for (std::size_t i = 0; i < out->size(); ++i) a->g[i] += out->g[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (std::size_t i = 0; i < out->size(); ++i) b->g[i] -= out->g[i];
            }
        });
    }
    return out;
}

template <typename T>
Var<T> mul(Tape<T>* tape, const Var<T>& a, const Var<T>& b) {
    if (!detail::same_shape(a, b)) throw ShapeError("mul: shape mismatch");
    Var<T> out = detail::make_out<T>(a->b, a->c, a->t, tape, a->requires_grad || b->requires_grad);
    for (std::size_t i = 0; i < out->size(); ++i) out->v[i] = a->v[i] * b->v[i];
    if (out->requires_grad) {
        tape->record([a, b, out] {
            if (a->requires_grad) {
                a->ensure_grad();
                for (std::size_t i = 0; i < out->size(); ++i) a->g[i] += out->g[i] * b->v[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (std::size_t i = 0; i < out->size(); ++i) b->g[i] += out->g[i] * a->v[i];
            }
        });
    }
    return out;
}

template <typename T>
Var<T> scale(Tape<T>* tape, const Var<T>& a, T k) {
    Var<T> out = detail::make_out<T>(a->b, a->c, a->t, tape, a->requires_grad);
    for (std::size_t i = 0; i < out->size(); ++i) out->v[i] = a->v[i] * k;
    if (out->requires_grad) {
        tape->record([a, out, k] {
            a->ensure_grad();
            for (std::size_t i = 0; i < out->size(); ++i) a->g[i] += out->g[i] * k;
        });
    }
    return out;
}

template <typename T>
Var<T> add_scalar(Tape<T>* tape, const Var<T>& a, T k) {
    Var<T> out = detail::make_out<T>(a->b, a->c, a->t, tape, a->requires_grad);
    for (std::size_t i = 0; i < out->size(); ++i) out->v[i] = a->v[i] + k;
    if (out->requires_grad) {
        tape->record([a, out] {
            a->ensure_grad();
            for (std::size_t i = 0; i < out->size(); ++i) a->g[i] += out->g[i];
        });
    }
    return out;
}

template <typename T>
Var<T> exp_(Tape<T>* tape, const Var<T>& a) {
    Var<T> out = detail::make_out<T>(a->b, a->c, a->t, tape, a->requires_grad);
    for (std::size_t i = 0; i < out->size(); ++i) out->v[i] = std::exp(a->v[i]);
    if (out->requires_grad) {
        tape->record([a, out] {
            a->ensure_grad();
            for (std::size_t i = 0; i < out->size(); ++i) a->g[i] += out->g[i] * out->v[i];
        });
    }
    return out;
}

// y = log(x + eps); the shift keeps the op defined at x == 0.
template <typename T>
Var<T> log_eps(Tape<T>* tape, const Var<T>& a, T eps) {
    Var<T> out = detail::make_out<T>(a->b, a->c, a->t, tape, a->requires_grad);
    for (std::size_t i = 0; i < out->size(); ++i) out->v[i] = std::log(a->v[i] + eps);
    if (out->requires_grad) {
        tape->record([a, out, eps] {
            a->ensure_grad();
            for (std::size_t i = 0; i < out->size(); ++i) a->g[i] += out->g[i] / (a->v[i] + eps);
        });
    }
    return out;
}

template <typename T>
Var<T> sqrt_eps(Tape<T>* tape, const Var<T>& a, T eps) {
    Var<T> out = detail::make_out<T>(a->b, a->c, a->t, tape, a->requires_grad);
    for (std::size_t i = 0; i < out->size(); ++i) out->v[i] = std::sqrt(a->v[i] + eps);
    if (out->requires_grad) {
        tape->record([a, out] {
            a->ensure_grad();
            for (std::size_t i = 0; i < out->size(); ++i)
                a->g[i] += out->g[i] / (T(2) * out->v[i]);
        });
    }
    return out;
}

template <typename T>
Var<T> tanh_(Tape<T>* tape, const Var<T>& a) {
    Var<T> out = detail::make_out<T>(a->b, a->c, a->t, tape, a->requires_grad);
    for (std::size_t i = 0; i < out->size(); ++i) out->v[i] = std::tanh(a->v[i]);
    if (out->requires_grad) {
        tape->record([a, out] {
            a->ensure_grad();
            for (std::size_t i = 0; i < out->size(); ++i)
                a->g[i] += out->g[i] * (T(1) - out->v[i] * out->v[i]);
        });
    }
    return out;
}

template <typename T>
Var<T> sigmoid_(Tape<T>* tape, const Var<T>& a) {
    Var<T> out = detail::make_out<T>(a->b, a->c, a->t, tape, a->requires_grad);
    for (std::size_t i = 0; i < out->size(); ++i)
        out->v[i] = T(1) / (T(1) + std::exp(-a->v[i]));
    if (out->requires_grad) {
        tape->record([a, out] {
            a->ensure_grad();
            for (std::size_t i = 0; i < out->size(); ++i)
                a->g[i] += out->g[i] * out->v[i] * (T(1) - out->v[i]);
        });
    }
    return out;
}

// slope 0 gives a plain relu (used for the hinge losses).
template <typename T>
Var<T> leaky_relu(Tape<T>* tape, const Var<T>& a, T slope) {
    Var<T> out = detail::make_out<T>(a->b, a->c, a->t, tape, a->requires_grad);
    for (std::size_t i = 0; i < out->size(); ++i)
        out->v[i] = a->v[i] > T(0) ? a->v[i] : slope * a->v[i];
    if (out->requires_grad) {
        tape->record([a, out, slope] {
            a->ensure_grad();
            for (std::size_t i = 0; i < out->size(); ++i)
                a->g[i] += out->g[i] * (a->v[i] > T(0) ? T(1) : slope);
        });
    }
    return out;
}

// Pass-through gradient inside (lo, hi), zero outside.
template <typename T>
Var<T> clamp_(Tape<T>* tape, const Var<T>& a, T lo, T hi) {
    Var<T> out = detail::make_out<T>(a->b, a->c, a->t, tape, a->requires_grad);
    for (std::size_t i = 0; i < out->size(); ++i)
        out->v[i] = std::min(hi, std::max(lo, a->v[i]));
    if (out->requires_grad) {
        tape->record([a, out, lo, hi] {
            a->ensure_grad();
            for (std::size_t i = 0; i < out->size(); ++i)
                if (a->v[i] > lo && a->v[i] < hi) a->g[i] += out->g[i];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// reductions (output is a 1x1x1 scalar)
// ---------------------------------------------------------------------------

template <typename T>
Var<T> reduce_sum(Tape<T>* tape, const Var<T>& a) {
    Var<T> out = detail::make_out<T>(1, 1, 1, tape, a->requires_grad);
    double acc = 0.0;  // double accumulation keeps large reductions stable
    for (std::size_t i = 0; i < a->size(); ++i) acc += static_cast<double>(a->v[i]);
    out->v[0] = static_cast<T>(acc);
    if (out->requires_grad) {
        tape->record([a, out] {
            a->ensure_grad();
            const T g = out->g[0];
            for (std::size_t i = 0; i < a->size(); ++i) a->g[i] += g;
        });
    }
    return out;
}

template <typename T>
Var<T> reduce_mean(Tape<T>* tape, const Var<T>& a) {
    Var<T> out = detail::make_out<T>(1, 1, 1, tape, a->requires_grad);
    double acc = 0.0;
    for (std::size_t i = 0; i < a->size(); ++i) acc += static_cast<double>(a->v[i]);
    const T inv = T(1) / static_cast<T>(a->size());
    out->v[0] = static_cast<T>(acc / static_cast<double>(a->size()));
    if (out->requires_grad) {
        tape->record([a, out, inv] {
            a->ensure_grad();
            const T g = out->g[0] * inv;
            for (std::size_t i = 0; i < a->size(); ++i) a->g[i] += g;
        });
    }
    return out;
}

template <typename T>
Var<T> sum_sq(Tape<T>* tape, const Var<T>& a) {
    Var<T> out = detail::make_out<T>(1, 1, 1, tape, a->requires_grad);
    double acc = 0.0;
    for (std::size_t i = 0; i < a->size(); ++i)
        acc += static_cast<double>(a->v[i]) * static_cast<double>(a->v[i]);
    out->v[0] = static_cast<T>(acc);
    if (out->requires_grad) {
        tape->record([a, out] {
            a->ensure_grad();
            const T g = out->g[0];
            for (std::size_t i = 0; i < a->size(); ++i) a->g[i] += T(2) * a->v[i] * g;
        });
    }
    return out;
}

// Sum of |x|; gradient uses sign(x) with sign(0) = 0.
template <typename T>
Var<T> abs_sum(Tape<T>* tape, const Var<T>& a) {
    Var<T> out = detail::make_out<T>(1, 1, 1, tape, a->requires_grad);
    double acc = 0.0;
    for (std::size_t i = 0; i < a->size(); ++i) acc += std::abs(static_cast<double>(a->v[i]));
    out->v[0] = static_cast<T>(acc);
    if (out->requires_grad) {
        tape->record([a, out] {
            a->ensure_grad();
            const T g = out->g[0];
            for (std::size_t i = 0; i < a->size(); ++i) {
                if (a->v[i] > T(0)) a->g[i] += g;
                else if (a->v[i] < T(0)) a->g[i] -= g;
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// broadcasting helpers
// ---------------------------------------------------------------------------

// x [B,C,T] + bias [1,C,1]
template <typename T>
Var<T> add_bias(Tape<T>* tape, const Var<T>& x, const Var<T>& bias) {
    if (bias->b != 1 || bias->t != 1 || bias->c != x->c) throw ShapeError("add_bias: bad bias shape");
    Var<T> out = detail::make_out<T>(x->b, x->c, x->t, tape, x->requires_grad || bias->requires_grad);
    for (int b = 0; b < x->b; ++b)
        for (int c = 0; c < x->c; ++c) {
            const T bv = bias->v[c];
            const std::size_t off = (static_cast<std::size_t>(b) * x->c + c) * x->t;
            for (int t = 0; t < x->t; ++t) out->v[off + t] = x->v[off + t] + bv;
        }
    if (out->requires_grad) {
        tape->record([x, bias, out] {
            if (x->requires_grad) {
                x->ensure_grad();
                for (std::size_t i = 0; i < out->size(); ++i) x->g[i] += out->g[i];
            }
            if (bias->requires_grad) {
                bias->ensure_grad();
                for (int b = 0; b < x->b; ++b)
                    for (int c = 0; c < x->c; ++c) {
                        const std::size_t off = (static_cast<std::size_t>(b) * x->c + c) * x->t;
                        T acc = T(0);
                        for (int t = 0; t < x->t; ++t) acc += out->g[off + t];
                        bias->g[c] += acc;
                    }
            }
        });
    }
    return out;
}

// x [B,C,T] * s [B,1,T]  (per-sample broadcast over channels)
template <typename T>
Var<T> mul_channel(Tape<T>* tape, const Var<T>& x, const Var<T>& s) {
    if (s->b != x->b || s->c != 1 || s->t != x->t) throw ShapeError("mul_channel: bad scale shape");
    Var<T> out = detail::make_out<T>(x->b, x->c, x->t, tape, x->requires_grad || s->requires_grad);
    for (int b = 0; b < x->b; ++b) {
        const T* sv = s->v.data() + static_cast<std::size_t>(b) * x->t;
        for (int c = 0; c < x->c; ++c) {
            const std::size_t off = (static_cast<std::size_t>(b) * x->c + c) * x->t;
            for (int t = 0; t < x->t; ++t) out->v[off + t] = x->v[off + t] * sv[t];
        }
    }
    if (out->requires_grad) {
        tape->record([x, s, out] {
            if (x->requires_grad) {
                x->ensure_grad();
                for (int b = 0; b < x->b; ++b) {
                    const T* sv = s->v.data() + static_cast<std::size_t>(b) * x->t;
                    for (int c = 0; c < x->c; ++c) {
                        const std::size_t off = (static_cast<std::size_t>(b) * x->c + c) * x->t;
                        for (int t = 0; t < x->t; ++t) x->g[off + t] += out->g[off + t] * sv[t];
                    }
                }
            }
            if (s->requires_grad) {
                s->ensure_grad();
                for (int b = 0; b < x->b; ++b) {
                    T* sg = s->g.data() + static_cast<std::size_t>(b) * x->t;
                    for (int c = 0; c < x->c; ++c) {
                        const std::size_t off = (static_cast<std::size_t>(b) * x->c + c) * x->t;
                        for (int t = 0; t < x->t; ++t) sg[t] += out->g[off + t] * x->v[off + t];
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

// x [B,Cin,T], w [Cout, Cin/groups, K], optional bias [1,Cout,1].
// out[b,oc,j] = bias[oc] + sum_{ic,k} w[oc,ic,k] * x[b, ic0+ic, j*stride + k*dilation - pad_left]
// Out-of-range input samples are zero (causal use: pad_left = dilation*(K-1) - (stride-1)).
template <typename T>
Var<T> conv1d(Tape<T>* tape, const Var<T>& x, const Var<T>& w, const Var<T>& bias,
              int stride, int pad_left, int pad_right, int dilation = 1, int groups = 1) {
    const int B = x->b, Cin = x->c, Tn = x->t;
    const int Cout = w->b, K = w->t;
    if (groups < 1 || Cin % groups != 0 || Cout % groups != 0)
        throw ShapeError("conv1d: bad group count");
    if (w->c != Cin / groups) throw ShapeError("conv1d: weight channel mismatch");
    if (stride < 1 || dilation < 1) throw ShapeError("conv1d: bad stride/dilation");
    if (bias && (bias->b != 1 || bias->c != Cout || bias->t != 1))
        throw ShapeError("conv1d: bad bias shape");
    const int span = dilation * (K - 1) + 1;
    const int Tout = (Tn + pad_left + pad_right - span) / stride + 1;
    if (Tout < 1) throw ShapeError("conv1d: output would be empty");

    const bool req = x->requires_grad || w->requires_grad || (bias && bias->requires_grad);
    Var<T> out = detail::make_out<T>(B, Cout, Tout, tape, req);

    const int cig = Cin / groups;   // input channels per group
    const int cog = Cout / groups;  // output channels per group

    for (int b = 0; b < B; ++b) {
        for (int oc = 0; oc < Cout; ++oc) {
            T* orow = out->v.data() + (static_cast<std::size_t>(b) * Cout + oc) * Tout;
            if (bias) {
                const T bv = bias->v[oc];
                for (int j = 0; j < Tout; ++j) orow[j] = bv;
            }
            const int ic0 = (oc / cog) * cig;
            for (int ic = 0; ic < cig; ++ic) {
                const T* xrow = x->v.data() + (static_cast<std::size_t>(b) * Cin + ic0 + ic) * Tn;
                const T* wrow = w->v.data() + (static_cast<std::size_t>(oc) * cig + ic) * K;
                for (int k = 0; k < K; ++k) {
                    const T wv = wrow[k];
                    if (wv == T(0)) continue;
                    const int off = k * dilation - pad_left;
                    // valid j: 0 <= j*stride + off < Tn
                    int j0 = off < 0 ? (-off + stride - 1) / stride : 0;
                    int j1 = (Tn - 1 - off) / stride + 1;
                    if (j1 > Tout) j1 = Tout;
                    if (stride == 1) {
                        const T* xs = xrow + off;
                        for (int j = j0; j < j1; ++j) orow[j] += wv * xs[j];
                    } else {
                        for (int j = j0; j < j1; ++j) orow[j] += wv * xrow[j * stride + off];
                    }
                }
            }
        }
    }

    if (out->requires_grad) {
        tape->record([x, w, bias, out, stride, pad_left, dilation, groups] {
            const int B = x->b, Cin = x->c, Tn = x->t;
            const int Cout = w->b, K = w->t, Tout = out->t;
            const int cig = Cin / groups, cog = Cout / groups;
            if (x->requires_grad) x->ensure_grad();
            if (w->requires_grad) w->ensure_grad();
            if (bias && bias->requires_grad) {
                bias->ensure_grad();
                for (int b = 0; b < B; ++b)
                    for (int oc = 0; oc < Cout; ++oc) {
                        const T* grow = out->g.data() + (static_cast<std::size_t>(b) * Cout + oc) * Tout;
                        T acc = T(0);
                        for (int j = 0; j < Tout; ++j) acc += grow[j];
                        bias->g[oc] += acc;
                    }
            }
            if (!x->requires_grad && !w->requires_grad) return;
            for (int b = 0; b < B; ++b) {
                for (int oc = 0; oc < Cout; ++oc) {
                    const T* grow = out->g.data() + (static_cast<std::size_t>(b) * Cout + oc) * Tout;
                    const int ic0 = (oc / cog) * cig;
                    for (int ic = 0; ic < cig; ++ic) {
                        const std::size_t xoff = (static_cast<std::size_t>(b) * Cin + ic0 + ic) * Tn;
                        const T* xrow = x->v.data() + xoff;
                        T* xgrow = x->requires_grad ? x->g.data() + xoff : nullptr;
                        const std::size_t woff = (static_cast<std::size_t>(oc) * cig + ic) * K;
                        const T* wrow = w->v.data() + woff;
                        T* wgrow = w->requires_grad ? w->g.data() + woff : nullptr;
                        for (int k = 0; k < K; ++k) {
                            const int off = k * dilation - pad_left;
                            int j0 = off < 0 ? (-off + stride - 1) / stride : 0;
                            int j1 = (Tn - 1 - off) / stride + 1;
                            if (j1 > Tout) j1 = Tout;
                            if (xgrow) {
                                const T wv = wrow[k];
                                for (int j = j0; j < j1; ++j) xgrow[j * stride + off] += wv * grow[j];
                            }
                            if (wgrow) {
                                T acc = T(0);
                                for (int j = j0; j < j1; ++j) acc += grow[j] * xrow[j * stride + off];
                                wgrow[k] += acc;
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

// Transposed convolution (exact adjoint of conv1d when given the same weight).
// x [B,Cin,T], w [Cin, Cout, K] (conv1d weight reinterpreted), optional bias.
// full[i*r + k] += w[cin,cout,k] * x[b,cin,i]; output = full[trim_left : trim_left+out_len].
// Causal decoder use: trim_left = 0, out_len = r * T (drops the (K - r)-sample tail).
template <typename T>
Var<T> tconv1d(Tape<T>* tape, const Var<T>& x, const Var<T>& w, const Var<T>& bias,
               int r, int trim_left, int out_len) {
    const int B = x->b, Cin = x->c, Tn = x->t;
    if (w->b != Cin) throw ShapeError("tconv1d: weight input-channel mismatch");
    const int Cout = w->c, K = w->t;
    if (r < 1) throw ShapeError("tconv1d: bad stride");
    const int full = (Tn - 1) * r + K;
    if (trim_left < 0 || out_len < 1 || trim_left + out_len > full)
        throw ShapeError("tconv1d: trim outside the full output");
    if (bias && (bias->b != 1 || bias->c != Cout || bias->t != 1))
        throw ShapeError("tconv1d: bad bias shape");

    const bool req = x->requires_grad || w->requires_grad || (bias && bias->requires_grad);
    Var<T> out = detail::make_out<T>(B, Cout, out_len, tape, req);

    for (int b = 0; b < B; ++b) {
        for (int cout = 0; cout < Cout; ++cout) {
            T* orow = out->v.data() + (static_cast<std::size_t>(b) * Cout + cout) * out_len;
            if (bias) {
                const T bv = bias->v[cout];
                for (int j = 0; j < out_len; ++j) orow[j] = bv;
            }
            for (int cin = 0; cin < Cin; ++cin) {
                const T* xrow = x->v.data() + (static_cast<std::size_t>(b) * Cin + cin) * Tn;
                const T* wrow = w->v.data() + (static_cast<std::size_t>(cin) * Cout + cout) * K;
                for (int k = 0; k < K; ++k) {
                    const T wv = wrow[k];
                    if (wv == T(0)) continue;
                    const int off = k - trim_left;
                    // out index j = i*r + off, valid when 0 <= j < out_len
                    int i0 = off < 0 ? (-off + r - 1) / r : 0;
                    int i1 = (out_len - 1 - off) / r + 1;
                    if (i1 > Tn) i1 = Tn;
                    for (int i = i0; i < i1; ++i) orow[i * r + off] += wv * xrow[i];
                }
            }
        }
    }

    if (out->requires_grad) {
        tape->record([x, w, bias, out, r, trim_left] {
            const int B = x->b, Cin = x->c, Tn = x->t;
            const int Cout = w->c, K = w->t, out_len = out->t;
            if (x->requires_grad) x->ensure_grad();
            if (w->requires_grad) w->ensure_grad();
            if (bias && bias->requires_grad) {
                bias->ensure_grad();
                for (int b = 0; b < B; ++b)
                    for (int cout = 0; cout < Cout; ++cout) {
                        const T* grow = out->g.data() + (static_cast<std::size_t>(b) * Cout + cout) * out_len;
                        T acc = T(0);
                        for (int j = 0; j < out_len; ++j) acc += grow[j];
                        bias->g[cout] += acc;
                    }
            }
            if (!x->requires_grad && !w->requires_grad) return;
            for (int b = 0; b < B; ++b) {
                for (int cout = 0; cout < Cout; ++cout) {
                    const T* grow = out->g.data() + (static_cast<std::size_t>(b) * Cout + cout) * out_len;
                    for (int cin = 0; cin < Cin; ++cin) {
                        const std::size_t xoff = (static_cast<std::size_t>(b) * Cin + cin) * Tn;
                        const T* xrow = x->v.data() + xoff;
                        T* xgrow = x->requires_grad ? x->g.data() + xoff : nullptr;
                        const std::size_t woff = (static_cast<std::size_t>(cin) * Cout + cout) * K;
                        const T* wrow = w->v.data() + woff;
                        T* wgrow = w->requires_grad ? w->g.data() + woff : nullptr;
                        for (int k = 0; k < K; ++k) {
                            const int off = k - trim_left;
                            int i0 = off < 0 ? (-off + r - 1) / r : 0;
                            int i1 = (out_len - 1 - off) / r + 1;
                            if (i1 > Tn) i1 = Tn;
                            if (xgrow) {
                                const T wv = wrow[k];
                                for (int i = i0; i < i1; ++i) xgrow[i] += wv * grow[i * r + off];
                            }
                            if (wgrow) {
                                T acc = T(0);
                                for (int i = i0; i < i1; ++i) acc += xrow[i] * grow[i * r + off];
                                wgrow[k] += acc;
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// batch norm
// ---------------------------------------------------------------------------

// Per-channel normalization over (batch, time). Training mode uses batch
// statistics (biased variance) and updates the running buffers in place;
// eval mode normalizes with the running buffers.
template <typename T>
Var<T> batch_norm(Tape<T>* tape, const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  const Var<T>& run_mean, const Var<T>& run_var, bool train,
                  T momentum = T(0.1), T eps = T(1e-5)) {
    const int B = x->b, C = x->c, Tn = x->t;
    if (gamma->c != C || beta->c != C || run_mean->c != C || run_var->c != C)
        throw ShapeError("batch_norm: channel mismatch");
    const std::size_t N = static_cast<std::size_t>(B) * Tn;
    if (train && N < 2) throw ShapeError("batch_norm: needs more than one sample per channel");

    Var<T> out = detail::make_out<T>(B, C, Tn, tape, x->requires_grad || gamma->requires_grad || beta->requires_grad);
    auto mean = std::make_shared<std::vector<T>>(C, T(0));
    auto ivar = std::make_shared<std::vector<T>>(C, T(0));

    for (int c = 0; c < C; ++c) {
        T m, v;
        if (train) {
            double acc = 0.0;
            for (int b = 0; b < B; ++b) {
                const T* row = x->v.data() + (static_cast<std::size_t>(b) * C + c) * Tn;
                for (int t = 0; t < Tn; ++t) acc += static_cast<double>(row[t]);
            }
            m = static_cast<T>(acc / static_cast<double>(N));
            double acc2 = 0.0;
            for (int b = 0; b < B; ++b) {
                const T* row = x->v.data() + (static_cast<std::size_t>(b) * C + c) * Tn;
                for (int t = 0; t < Tn; ++t) {
                    const double d = static_cast<double>(row[t]) - static_cast<double>(m);
                    acc2 += d * d;
                }
            }
            v = static_cast<T>(acc2 / static_cast<double>(N));
            run_mean->v[c] = (T(1) - momentum) * run_mean->v[c] + momentum * m;
            run_var->v[c] = (T(1) - momentum) * run_var->v[c] + momentum * v;
        } else {
            m = run_mean->v[c];
            v = run_var->v[c];
        }
        (*mean)[c] = m;
        (*ivar)[c] = T(1) / std::sqrt(v + eps);
        const T ggam = gamma->v[c], gbet = beta->v[c], iv = (*ivar)[c];
        for (int b = 0; b < B; ++b) {
            const T* row = x->v.data() + (static_cast<std::size_t>(b) * C + c) * Tn;
            T* orow = out->v.data() + (static_cast<std::size_t>(b) * C + c) * Tn;
            for (int t = 0; t < Tn; ++t) orow[t] = ggam * (row[t] - m) * iv + gbet;
        }
    }

    if (out->requires_grad) {
        tape->record([x, gamma, beta, out, mean, ivar, train] {
            const int B = x->b, C = x->c, Tn = x->t;
            const T N = static_cast<T>(static_cast<std::size_t>(B) * Tn);
            if (x->requires_grad) x->ensure_grad();
            if (gamma->requires_grad) gamma->ensure_grad();
            if (beta->requires_grad) beta->ensure_grad();
            for (int c = 0; c < C; ++c) {
                const T m = (*mean)[c], iv = (*ivar)[c], gam = gamma->v[c];
                T sum_g = T(0), sum_gx = T(0);
                for (int b = 0; b < B; ++b) {
                    const std::size_t off = (static_cast<std::size_t>(b) * C + c) * Tn;
                    for (int t = 0; t < Tn; ++t) {
                        const T g = out->g[off + t];
                        sum_g += g;
                        sum_gx += g * (x->v[off + t] - m) * iv;
                    }
                }
                if (gamma->requires_grad) gamma->g[c] += sum_gx;
                if (beta->requires_grad) beta->g[c] += sum_g;
                if (!x->requires_grad) continue;
                for (int b = 0; b < B; ++b) {
                    const std::size_t off = (static_cast<std::size_t>(b) * C + c) * Tn;
                    for (int t = 0; t < Tn; ++t) {
                        const T g = out->g[off + t];
                        const T xhat = (x->v[off + t] - m) * iv;
                        if (train) {
                            x->g[off + t] += gam * iv * (g - sum_g / N - xhat * sum_gx / N);
                        } else {
                            x->g[off + t] += gam * iv * g;
                        }
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// pooling
// ---------------------------------------------------------------------------

// Average pool, kernel 2 stride 2; an odd trailing sample is dropped.
template <typename T>
Var<T> avg_pool2(Tape<T>* tape, const Var<T>& x) {
    const int Tout = x->t / 2;
    if (Tout < 1) throw ShapeError("avg_pool2: input too short");
    Var<T> out = detail::make_out<T>(x->b, x->c, Tout, tape, x->requires_grad);
    for (int b = 0; b < x->b; ++b)
        for (int c = 0; c < x->c; ++c) {
            const T* row = x->v.data() + (static_cast<std::size_t>(b) * x->c + c) * x->t;
            T* orow = out->v.data() + (static_cast<std::size_t>(b) * x->c + c) * Tout;
            for (int j = 0; j < Tout; ++j) orow[j] = T(0.5) * (row[2 * j] + row[2 * j + 1]);
        }
    if (out->requires_grad) {
        tape->record([x, out] {
            const int Tout = out->t;
            x->ensure_grad();
            for (int b = 0; b < x->b; ++b)
                for (int c = 0; c < x->c; ++c) {
                    T* grow = x->g.data() + (static_cast<std::size_t>(b) * x->c + c) * x->t;
                    const T* og = out->g.data() + (static_cast<std::size_t>(b) * x->c + c) * Tout;
                    for (int j = 0; j < Tout; ++j) {
                        const T g = T(0.5) * og[j];
                        grow[2 * j] += g;
                        grow[2 * j + 1] += g;
                    }
                }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// STFT amplitude
// ---------------------------------------------------------------------------

// x [B,1,T] -> [B, frames, bins] amplitudes at one scale (hop = scale/4, tail
// zero-padded). Magnitudes use sqrt(re^2 + im^2 + mag_eps^2) so the gradient
// stays defined at empty bins.
template <typename T>
Var<T> stft_amp(Tape<T>* tape, const Var<T>& x, int scale, dsp::Window window,
                double mag_eps = 1e-12) {
    if (x->c != 1) throw ShapeError("stft_amp expects a single channel");
    const int B = x->b;
    const std::size_t len = static_cast<std::size_t>(x->t);
    const int n = scale, hop = n / 4;
    if (!fft::is_power_of_two(static_cast<unsigned>(n)))
        throw ConfigError("stft scale must be a power of two");
    const int frames = dsp::frame_count(len, n);
    const int bins = n / 2 + 1;
    const auto win = std::make_shared<std::vector<double>>(dsp::make_window(n, window));

    Var<T> out = detail::make_out<T>(B, frames, bins, tape, x->requires_grad);
    // Cached spectra for the backward pass (complex, per batch/frame/bin).
    auto spectra = out->requires_grad
                       ? std::make_shared<std::vector<std::complex<double>>>(
                             static_cast<std::size_t>(B) * frames * bins)
                       : nullptr;

    std::vector<double> buf(static_cast<std::size_t>(n));
    for (int b = 0; b < B; ++b) {
        const T* xrow = x->v.data() + static_cast<std::size_t>(b) * x->t;
        for (int f = 0; f < frames; ++f) {
            const std::size_t off = static_cast<std::size_t>(f) * hop;
            for (int m = 0; m < n; ++m) {
                const std::size_t idx = off + m;
                buf[m] = (idx < len ? static_cast<double>(xrow[idx]) : 0.0) * (*win)[m];
            }
            const std::vector<std::complex<double>> spec = fft::rfft(buf.data(), n);
            T* orow = out->v.data() + (static_cast<std::size_t>(b) * frames + f) * bins;
            for (int k = 0; k < bins; ++k) {
                const double re = spec[k].real(), im = spec[k].imag();
                orow[k] = static_cast<T>(std::sqrt(re * re + im * im + mag_eps * mag_eps));
                if (spectra) (*spectra)[(static_cast<std::size_t>(b) * frames + f) * bins + k] = spec[k];
            }
        }
    }

    if (out->requires_grad) {
        tape->record([x, out, spectra, win, n, hop, frames, bins, mag_eps] {
            x->ensure_grad();
            std::vector<std::complex<double>> gspec(static_cast<std::size_t>(bins));
            for (int b = 0; b < x->b; ++b) {
                T* xg = x->g.data() + static_cast<std::size_t>(b) * x->t;
                for (int f = 0; f < frames; ++f) {
                    const std::size_t base = (static_cast<std::size_t>(b) * frames + f) * bins;
                    for (int k = 0; k < bins; ++k) {
                        const std::complex<double> z = (*spectra)[base + k];
                        const double mag = std::sqrt(z.real() * z.real() + z.imag() * z.imag() +
                                                     mag_eps * mag_eps);
                        const double g = static_cast<double>(out->g[base + k]) / mag;
                        gspec[k] = z * g;
                    }
                    const std::vector<double> gframe = fft::rfft_adjoint(gspec, n);
                    const std::size_t off = static_cast<std::size_t>(f) * hop;
                    for (int m = 0; m < n; ++m) {
                        const std::size_t idx = off + m;
                        if (idx < static_cast<std::size_t>(x->t))
                            xg[idx] += static_cast<T>(gframe[m] * (*win)[m]);
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

// Adam with bias correction over one parameter group.
template <typename T>
class Adam {
  public:
    Adam() = default;
    Adam(std::vector<Var<T>> params, T lr, T beta1 = T(0.5), T beta2 = T(0.9), T eps = T(1e-8))
        : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (std::size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(params_[i]->size(), T(0));
            v_[i].assign(params_[i]->size(), T(0));
        }
    }

    void zero_grad() {
        for (auto& p : params_) p->zero_grad();
    }

    void step() {
        ++t_;
        const T bc1 = T(1) - std::pow(beta1_, static_cast<T>(t_));
        const T bc2 = T(1) - std::pow(beta2_, static_cast<T>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = *params_[i];
            if (p.g.empty()) continue;
            for (std::size_t j = 0; j < p.v.size(); ++j) {
                const T g = p.g[j];
                m_[i][j] = beta1_ * m_[i][j] + (T(1) - beta1_) * g;
                v_[i][j] = beta2_ * v_[i][j] + (T(1) - beta2_) * g * g;
                const T mhat = m_[i][j] / bc1;
                const T vhat = v_[i][j] / bc2;
                p.v[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

    std::int64_t step_count() const { return t_; }
    void set_step_count(std::int64_t t) { t_ = t; }
    const std::vector<Var<T>>& params() const { return params_; }
    std::vector<T>& moment1(std::size_t i) { return m_[i]; }
    std::vector<T>& moment2(std::size_t i) { return v_[i]; }
    T learning_rate() const { return lr_; }
    void set_learning_rate(T lr) { lr_ = lr; }

  private:
    std::vector<Var<T>> params_;
    std::vector<std::vector<T>> m_, v_;
    T lr_ = T(1e-4), beta1_ = T(0.5), beta2_ = T(0.9), eps_ = T(1e-8);
    std::int64_t t_ = 0;
};

// ---------------------------------------------------------------------------
// initialization
// ---------------------------------------------------------------------------

template <typename T>
void kaiming_uniform(Var<T>& w, int fan_in, Rng& rng, double leaky_slope = 0.2) {
    const double gain = std::sqrt(2.0 / (1.0 + leaky_slope * leaky_slope));
    const double bound = gain * std::sqrt(3.0 / fan_in);
    for (auto& v : w->v) v = static_cast<T>(rng.uniform(-bound, bound));
}

template <typename T>
void fill_constant(Var<T>& w, T value) {
    std::fill(w->v.begin(), w->v.end(), value);
}

}  // namespace rave::ag
