#include "cpgait/tape.hpp"

#include <algorithm>
#include <cmath>

namespace cpgait::ad {

template <class T>
typename Tape<T>::Var Tape<T>::push(Tensor<T> value, bool requires_grad,
                                    std::function<void(Tape&)> back) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<Var>(nodes_.size() - 1);
}

template <class T>
typename Tape<T>::Var Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
    return push(std::move(value), requires_grad, nullptr);
}

template <class T>
Tensor<T>& Tape<T>::grad_buf(Var v) {
    Node& n = node(v);
    if (!n.grad_ready) {
        n.grad = Tensor<T>(n.value.shape, T(0));
        n.grad_ready = true;
    }
    return n.grad;
}

template <class T>
void Tape<T>::accumulate(Var v, const Tensor<T>& g) {
    Tensor<T>& dst = grad_buf(v);
    const std::int64_t n = dst.size();
    T* __restrict d = dst.ptr();
    const T* __restrict s = g.ptr();
    for (std::int64_t i = 0; i < n; ++i) d[i] += s[i];
}

template <class T>
const Tensor<T>& Tape<T>::grad(Var v) {
    Node& n = node(v);
    if (!n.grad_ready) {
        n.grad = Tensor<T>(n.value.shape, T(0));
        n.grad_ready = true;
    }
    return n.grad;
}

template <class T>
void Tape<T>::backward(Var loss) {
    require(!backward_done_, "backward: tape already swept");
    require(node(loss).value.is_scalar(), "backward: loss must be scalar");
    backward_done_ = true;
    grad_buf(loss)[0] = T(1);
    for (std::int64_t i = static_cast<std::int64_t>(nodes_.size()) - 1; i >= 0; --i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (!n.grad_ready || !n.back) continue;
        n.back(*this);
    }
}

// --- matmul ----------------------------------------------------------------

template <class T>
typename Tape<T>::Var Tape<T>::matmul(Var a, Var b) {
    const Tensor<T>& av = val(a);
    const Tensor<T>& bv = val(b);
    require(av.ndim() == 2 && bv.ndim() == 2 && av.dim(1) == bv.dim(0),
            "matmul: inner dimensions disagree " + shape_str(av) + " x " + shape_str(bv));
    const std::int64_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    Tensor<T> y({m, n}, T(0));
    {
        const T* __restrict ap = av.ptr();
        const T* __restrict bp = bv.ptr();
        T* __restrict yp = y.ptr();
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t l = 0; l < k; ++l) {
                const T ail = ap[i * k + l];
                const T* __restrict br = bp + l * n;
                T* __restrict yr = yp + i * n;
                for (std::int64_t j = 0; j < n; ++j) yr[j] += ail * br[j];
            }
    }
    const bool rg = requires_grad(a) || requires_grad(b);
    Var out = push(std::move(y), rg, nullptr);
    if (rg) {
        node(out).back = [a, b, out, m, k, n](Tape& t) {
            const Tensor<T>& dy = t.grad(out);
            if (t.requires_grad(a)) {
                const Tensor<T>& bv2 = t.val(b);
                Tensor<T>& da = t.grad_buf(a);
                for (std::int64_t i = 0; i < m; ++i)
                    for (std::int64_t l = 0; l < k; ++l) {
                        const T* __restrict dyr = dy.ptr() + i * n;
                        const T* __restrict br = bv2.ptr() + l * n;
                        T acc = T(0);
                        for (std::int64_t j = 0; j < n; ++j) acc += dyr[j] * br[j];
                        da[i * k + l] += acc;
                    }
            }
            if (t.requires_grad(b)) {
                const Tensor<T>& av2 = t.val(a);
                Tensor<T>& db = t.grad_buf(b);
                for (std::int64_t i = 0; i < m; ++i)
                    for (std::int64_t l = 0; l < k; ++l) {
                        const T ail = av2[i * k + l];
                        if (ail == T(0)) continue;
                        const T* __restrict dyr = dy.ptr() + i * n;
                        T* __restrict dbr = db.ptr() + l * n;
                        for (std::int64_t j = 0; j < n; ++j) dbr[j] += ail * dyr[j];
                    }
            }
        };
    }
    return out;
}

// --- elementwise and reductions -------------------------------------------

template <class T>
typename Tape<T>::Var Tape<T>::relu(Var x) {
    const Tensor<T>& xv = val(x);
    Tensor<T> y = xv;
    for (auto& v : y.data) v = v > T(0) ? v : T(0);
    const bool rg = requires_grad(x);
    Var out = push(std::move(y), rg, nullptr);
    if (rg) {
        node(out).back = [x, out](Tape& t) {
            if (!t.requires_grad(x)) return;
            const Tensor<T>& dy = t.grad(out);
            const Tensor<T>& xv2 = t.val(x);
            Tensor<T>& dx = t.grad_buf(x);
            const std::int64_t n = dx.size();
            for (std::int64_t i = 0; i < n; ++i)
                if (xv2[i] > T(0)) dx[i] += dy[i];
        };
    }
    return out;
}

template <class T>
typename Tape<T>::Var Tape<T>::sigmoid(Var x) {
    const Tensor<T>& xv = val(x);
    Tensor<T> y = xv;
    for (auto& v : y.data) {
        const double z = static_cast<double>(v);
        v = static_cast<T>(1.0 / (1.0 + std::exp(-z)));
    }
    const bool rg = requires_grad(x);
    Var out = push(std::move(y), rg, nullptr);
    if (rg) {
        node(out).back = [x, out](Tape& t) {
            if (!t.requires_grad(x)) return;
            const Tensor<T>& dy = t.grad(out);
            const Tensor<T>& yv = t.val(out);
            Tensor<T>& dx = t.grad_buf(x);
            const std::int64_t n = dx.size();
            for (std::int64_t i = 0; i < n; ++i) dx[i] += dy[i] * yv[i] * (T(1) - yv[i]);
        };
    }
    return out;
}

template <class T>
typename Tape<T>::Var Tape<T>::dropout(Var x, T rate, Mode mode, Rng& rng) {
    require(rate >= T(0) && rate < T(1), "dropout: rate must be in [0,1)");
    if (mode == Mode::eval || rate == T(0)) {
        // identity pass-through; keeps rng stream untouched
        Tensor<T> y = val(x);
        const bool rg = requires_grad(x);
        Var out = push(std::move(y), rg, nullptr);
        if (rg) {
            node(out).back = [x, out](Tape& t) {
                if (t.requires_grad(x)) t.accumulate(x, t.grad(out));
            };
        }
        return out;
    }
    const Tensor<T>& xv = val(x);
    const T keep_scale = T(1) / (T(1) - rate);
    Tensor<T> mask(xv.shape, T(0));
    for (auto& m : mask.data) m = rng.uniform() >= static_cast<double>(rate) ? keep_scale : T(0);
    Tensor<T> y = xv;
    for (std::int64_t i = 0; i < y.size(); ++i) y[i] *= mask[i];
    const bool rg = requires_grad(x);
    Var out = push(std::move(y), rg, nullptr);
    if (rg) {
        node(out).back = [x, out, mask](Tape& t) {
            if (!t.requires_grad(x)) return;
            const Tensor<T>& dy = t.grad(out);
            Tensor<T>& dx = t.grad_buf(x);
            for (std::int64_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * mask[i];
        };
    }
    return out;
}

template <class T>
typename Tape<T>::Var Tape<T>::add(Var a, Var b) {
    const Tensor<T>& av = val(a);
    const Tensor<T>& bv = val(b);
    require(av.same_shape(bv),
            "add: shape mismatch " + shape_str(av) + " vs " + shape_str(bv));
    Tensor<T> y = av;
    for (std::int64_t i = 0; i < y.size(); ++i) y[i] += bv[i];
    const bool rg = requires_grad(a) || requires_grad(b);
    Var out = push(std::move(y), rg, nullptr);
    if (rg) {
        node(out).back = [a, b, out](Tape& t) {
            const Tensor<T>& dy = t.grad(out);
            if (t.requires_grad(a)) t.accumulate(a, dy);
            if (t.requires_grad(b)) t.accumulate(b, dy);
        };
    }
    return out;
}

template <class T>
typename Tape<T>::Var Tape<T>::mul(Var a, Var b) {
    const Tensor<T>& av = val(a);
    const Tensor<T>& bv = val(b);
    require(av.same_shape(bv), "mul: shape mismatch");
    Tensor<T> y = av;
    for (std::int64_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
    const bool rg = requires_grad(a) || requires_grad(b);
    Var out = push(std::move(y), rg, nullptr);
    if (rg) {
        node(out).back = [a, b, out](Tape& t) {
            const Tensor<T>& dy = t.grad(out);
            if (t.requires_grad(a)) {
                const Tensor<T>& bv2 = t.val(b);
                Tensor<T>& da = t.grad_buf(a);
                for (std::int64_t i = 0; i < da.size(); ++i) da[i] += dy[i] * bv2[i];
            }
            if (t.requires_grad(b)) {
                const Tensor<T>& av2 = t.val(a);
                Tensor<T>& db = t.grad_buf(b);
                for (std::int64_t i = 0; i < db.size(); ++i) db[i] += dy[i] * av2[i];
            }
        };
    }
    return out;
}

template <class T>
typename Tape<T>::Var Tape<T>::scale(Var x, T c) {
    Tensor<T> y = val(x);
    for (auto& v : y.data) v *= c;
    const bool rg = requires_grad(x);
    Var out = push(std::move(y), rg, nullptr);
    if (rg) {
        node(out).back = [x, out, c](Tape& t) {
            if (!t.requires_grad(x)) return;
            const Tensor<T>& dy = t.grad(out);
            Tensor<T>& dx = t.grad_buf(x);
            for (std::int64_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * c;
        };
    }
    return out;
}

template <class T>
typename Tape<T>::Var Tape<T>::sum(Var x) {
    const Tensor<T>& xv = val(x);
    T acc = T(0);
    for (T v : xv.data) acc += v;
    const bool rg = requires_grad(x);
    Var out = push(Tensor<T>::scalar(acc), rg, nullptr);
    if (rg) {
        node(out).back = [x, out](Tape& t) {
            if (!t.requires_grad(x)) return;
            const T g = t.grad(out)[0];
            Tensor<T>& dx = t.grad_buf(x);
            for (std::int64_t i = 0; i < dx.size(); ++i) dx[i] += g;
        };
    }
    return out;
}

template <class T>
typename Tape<T>::Var Tape<T>::select_scalar(Var x, std::int64_t flat_index) {
    const Tensor<T>& xv = val(x);
    require(flat_index >= 0 && flat_index < xv.size(), "select_scalar: index out of range");
    const bool rg = requires_grad(x);
    Var out = push(Tensor<T>::scalar(xv[flat_index]), rg, nullptr);
    if (rg) {
        node(out).back = [x, out, flat_index](Tape& t) {
            if (!t.requires_grad(x)) return;
            t.grad_buf(x)[flat_index] += t.grad(out)[0];
        };
    }
    return out;
}

// --- dense layers ----------------------------------------------------------

template <class T>
typename Tape<T>::Var Tape<T>::linear(Var x, Var w, Var b) {
    const Tensor<T>& xv = val(x);
    const Tensor<T>& wv = val(w);
    const Tensor<T>& bv = val(b);
    require(xv.ndim() == 2 && wv.ndim() == 2 && bv.ndim() == 1 && xv.dim(1) == wv.dim(1) &&
                wv.dim(0) == bv.dim(0),
            "linear: shape mismatch " + shape_str(xv) + ", " + shape_str(wv));
    const std::int64_t N = xv.dim(0), F = xv.dim(1), G = wv.dim(0);
    Tensor<T> y({N, G}, T(0));
    {
        const T* __restrict xp = xv.ptr();
        const T* __restrict wp = wv.ptr();
        const T* __restrict bp = bv.ptr();
        T* __restrict yp = y.ptr();
        for (std::int64_t n = 0; n < N; ++n)
            for (std::int64_t g = 0; g < G; ++g) {
                T acc = bp[g];
                const T* __restrict xr = xp + n * F;
                const T* __restrict wr = wp + g * F;
                for (std::int64_t f = 0; f < F; ++f) acc += xr[f] * wr[f];
                yp[n * G + g] = acc;
            }
    }
    const bool rg = requires_grad(x) || requires_grad(w) || requires_grad(b);
    Var out = push(std::move(y), rg, nullptr);
    if (rg) {
        node(out).back = [x, w, b, out, N, F, G](Tape& t) {
            const Tensor<T>& dy = t.grad(out);
            if (t.requires_grad(x)) {
                const Tensor<T>& wv2 = t.val(w);
                Tensor<T>& dx = t.grad_buf(x);
                for (std::int64_t n = 0; n < N; ++n)
                    for (std::int64_t g = 0; g < G; ++g) {
                        const T d = dy[n * G + g];
                        if (d == T(0)) continue;
                        const T* __restrict wr = wv2.ptr() + g * F;
                        T* __restrict dxr = dx.ptr() + n * F;
                        for (std::int64_t f = 0; f < F; ++f) dxr[f] += d * wr[f];
                    }
            }
            if (t.requires_grad(w)) {
                const Tensor<T>& xv2 = t.val(x);
                Tensor<T>& dw = t.grad_buf(w);
                for (std::int64_t n = 0; n < N; ++n)
                    for (std::int64_t g = 0; g < G; ++g) {
                        const T d = dy[n * G + g];
                        if (d == T(0)) continue;
                        const T* __restrict xr = xv2.ptr() + n * F;
                        T* __restrict dwr = dw.ptr() + g * F;
                        for (std::int64_t f = 0; f < F; ++f) dwr[f] += d * xr[f];
                    }
            }
            if (t.requires_grad(b)) {
                Tensor<T>& db = t.grad_buf(b);
                for (std::int64_t n = 0; n < N; ++n)
                    for (std::int64_t g = 0; g < G; ++g) db[g] += dy[n * G + g];
            }
        };
    }
    return out;
}

template <class T>
typename Tape<T>::Var Tape<T>::pointwise_linear(Var x, Var w, Var b) {
    const Tensor<T>& xv = val(x);
    const Tensor<T>& wv = val(w);
    const Tensor<T>& bv = val(b);
    require(xv.ndim() == 4 && wv.ndim() == 2 && bv.ndim() == 1 && wv.dim(1) == xv.dim(1) &&
                wv.dim(0) == bv.dim(0),
            "pointwise_linear: shape mismatch " + shape_str(xv) + ", " + shape_str(wv));
    const std::int64_t N = xv.dim(0), C = xv.dim(1), Tt = xv.dim(2), V = xv.dim(3);
    const std::int64_t O = wv.dim(0), TV = Tt * V;
    Tensor<T> y({N, O, Tt, V});
    {
        const T* __restrict xp = xv.ptr();
        const T* __restrict wp = wv.ptr();
        const T* __restrict bp = bv.ptr();
        T* __restrict yp = y.ptr();
        for (std::int64_t n = 0; n < N; ++n)
            for (std::int64_t o = 0; o < O; ++o) {
                T* __restrict yr = yp + (n * O + o) * TV;
                const T bias = bp[o];
                for (std::int64_t i = 0; i < TV; ++i) yr[i] = bias;
                for (std::int64_t c = 0; c < C; ++c) {
                    const T woc = wp[o * C + c];
                    if (woc == T(0)) continue;
                    const T* __restrict xr = xp + (n * C + c) * TV;
                    for (std::int64_t i = 0; i < TV; ++i) yr[i] += woc * xr[i];
                }
            }
    }
    const bool rg = requires_grad(x) || requires_grad(w) || requires_grad(b);
    Var out = push(std::move(y), rg, nullptr);
    if (rg) {
        node(out).back = [x, w, b, out, N, C, O, TV](Tape& t) {
            const Tensor<T>& dy = t.grad(out);
            if (t.requires_grad(x)) {
                const Tensor<T>& wv2 = t.val(w);
                Tensor<T>& dx = t.grad_buf(x);
                for (std::int64_t n = 0; n < N; ++n)
                    for (std::int64_t c = 0; c < C; ++c) {
                        T* __restrict dxr = dx.ptr() + (n * C + c) * TV;
                        for (std::int64_t o = 0; o < O; ++o) {
                            const T woc = wv2[o * C + c];
                            if (woc == T(0)) continue;
                            const T* __restrict dyr = dy.ptr() + (n * O + o) * TV;
                            for (std::int64_t i = 0; i < TV; ++i) dxr[i] += woc * dyr[i];
                        }
                    }
            }
            if (t.requires_grad(w)) {
                const Tensor<T>& xv2 = t.val(x);
                Tensor<T>& dw = t.grad_buf(w);
                for (std::int64_t n = 0; n < N; ++n)
                    for (std::int64_t o = 0; o < O; ++o)
                        for (std::int64_t c = 0; c < C; ++c) {
                            const T* __restrict dyr = dy.ptr() + (n * O + o) * TV;
                            const T* __restrict xr = xv2.ptr() + (n * C + c) * TV;
                            T acc = T(0);
                            for (std::int64_t i = 0; i < TV; ++i) acc += dyr[i] * xr[i];
                            dw[o * C + c] += acc;
                        }
            }
            if (t.requires_grad(b)) {
                Tensor<T>& db = t.grad_buf(b);
                for (std::int64_t n = 0; n < N; ++n)
                    for (std::int64_t o = 0; o < O; ++o) {
                        const T* __restrict dyr = dy.ptr() + (n * O + o) * TV;
                        T acc = T(0);
                        for (std::int64_t i = 0; i < TV; ++i) acc += dyr[i];
                        db[o] += acc;
                    }
            }
        };
    }
    return out;
}

template <class T>
typename Tape<T>::Var Tape<T>::temporal_conv(Var x, Var w, Var b, int stride, int padding) {
    const Tensor<T>& xv = val(x);
    const Tensor<T>& wv = val(w);
    const Tensor<T>& bv = val(b);
    require(xv.ndim() == 4 && wv.ndim() == 3 && bv.ndim() == 1, "temporal_conv: bad ranks");
    require(wv.dim(1) == xv.dim(1) && wv.dim(0) == bv.dim(0), "temporal_conv: channel mismatch");
    const std::int64_t k = wv.dim(2);
    require(k % 2 == 1, "temporal_conv: kernel must be odd");
    require(stride >= 1 && padding >= 0, "temporal_conv: bad stride/padding");
    const std::int64_t N = xv.dim(0), C = xv.dim(1), Tin = xv.dim(2), V = xv.dim(3);
    const std::int64_t O = wv.dim(0);
    const std::int64_t Tout = (Tin + 2 * padding - k) / stride + 1;
    require(Tout >= 1, "temporal_conv: output length < 1");
    Tensor<T> y({N, O, Tout, V});
    {
        const T* __restrict xp = xv.ptr();
        const T* __restrict wp = wv.ptr();
        const T* __restrict bp = bv.ptr();
        T* __restrict yp = y.ptr();
        for (std::int64_t n = 0; n < N; ++n)
            for (std::int64_t o = 0; o < O; ++o) {
                T* __restrict yblk = yp + (n * O + o) * Tout * V;
                const T bias = bp[o];
                for (std::int64_t i = 0; i < Tout * V; ++i) yblk[i] = bias;
                for (std::int64_t c = 0; c < C; ++c) {
                    const T* __restrict xblk = xp + (n * C + c) * Tin * V;
                    const T* __restrict wrow = wp + (o * C + c) * k;
                    for (std::int64_t i = 0; i < k; ++i) {
                        const T wi = wrow[i];
                        if (wi == T(0)) continue;
                        // valid output range for this kernel offset
                        for (std::int64_t to = 0; to < Tout; ++to) {
                            const std::int64_t ti = to * stride - padding + i;
                            if (ti < 0 || ti >= Tin) continue;
                            const T* __restrict xr = xblk + ti * V;
                            T* __restrict yr = yblk + to * V;
                            for (std::int64_t v = 0; v < V; ++v) yr[v] += wi * xr[v];
                        }
                    }
                }
            }
    }
    const bool rg = requires_grad(x) || requires_grad(w) || requires_grad(b);
    Var out = push(std::move(y), rg, nullptr);
    if (rg) {
        node(out).back = [x, w, b, out, stride, padding, N, C, Tin, V, O, Tout, k](Tape& t) {
            const Tensor<T>& dy = t.grad(out);
            if (t.requires_grad(x)) {
                const Tensor<T>& wv2 = t.val(w);
                Tensor<T>& dx = t.grad_buf(x);
                for (std::int64_t n = 0; n < N; ++n)
                    for (std::int64_t c = 0; c < C; ++c) {
                        T* __restrict dxblk = dx.ptr() + (n * C + c) * Tin * V;
                        for (std::int64_t o = 0; o < O; ++o) {
                            const T* __restrict dyblk = dy.ptr() + (n * O + o) * Tout * V;
                            const T* __restrict wrow = wv2.ptr() + (o * C + c) * k;
                            for (std::int64_t i = 0; i < k; ++i) {
                                const T wi = wrow[i];
                                if (wi == T(0)) continue;
                                for (std::int64_t to = 0; to < Tout; ++to) {
                                    const std::int64_t ti = to * stride - padding + i;
                                    if (ti < 0 || ti >= Tin) continue;
                                    const T* __restrict dyr = dyblk + to * V;
                                    T* __restrict dxr = dxblk + ti * V;
                                    for (std::int64_t v = 0; v < V; ++v) dxr[v] += wi * dyr[v];
                                }
                            }
                        }
                    }
            }
            if (t.requires_grad(w)) {
                const Tensor<T>& xv2 = t.val(x);
                Tensor<T>& dw = t.grad_buf(w);
                for (std::int64_t n = 0; n < N; ++n)
                    for (std::int64_t o = 0; o < O; ++o) {
                        const T* __restrict dyblk = dy.ptr() + (n * O + o) * Tout * V;
                        for (std::int64_t c = 0; c < C; ++c) {
                            const T* __restrict xblk = xv2.ptr() + (n * C + c) * Tin * V;
                            T* __restrict dwrow = dw.ptr() + (o * C + c) * k;
                            for (std::int64_t i = 0; i < k; ++i) {
                                T acc = T(0);
                                for (std::int64_t to = 0; to < Tout; ++to) {
                                    const std::int64_t ti = to * stride - padding + i;
                                    if (ti < 0 || ti >= Tin) continue;
                                    const T* __restrict dyr = dyblk + to * V;
                                    const T* __restrict xr = xblk + ti * V;
                                    for (std::int64_t v = 0; v < V; ++v) acc += dyr[v] * xr[v];
                                }
                                dwrow[i] += acc;
                            }
                        }
                    }
            }
            if (t.requires_grad(b)) {
                Tensor<T>& db = t.grad_buf(b);
                for (std::int64_t n = 0; n < N; ++n)
                    for (std::int64_t o = 0; o < O; ++o) {
                        const T* __restrict dyblk = dy.ptr() + (n * O + o) * Tout * V;
                        T acc = T(0);
                        for (std::int64_t i = 0; i < Tout * V; ++i) acc += dyblk[i];
                        db[o] += acc;
                    }
            }
        };
    }
    return out;
}

template <class T>
typename Tape<T>::Var Tape<T>::graph_mul(Var x, const Tensor<T>& a_hat) {
    const Tensor<T>& xv = val(x);
    require(xv.ndim() == 4 && a_hat.ndim() == 2 && a_hat.dim(0) == a_hat.dim(1) &&
                xv.dim(3) == a_hat.dim(0),
            "graph_mul: node count mismatch " + shape_str(xv) + " vs " + shape_str(a_hat));
    const std::int64_t NCT = xv.dim(0) * xv.dim(1) * xv.dim(2), V = xv.dim(3);
    Tensor<T> y(xv.shape, T(0));
    {
        const T* __restrict xp = xv.ptr();
        const T* __restrict ap = a_hat.ptr();
        T* __restrict yp = y.ptr();
        for (std::int64_t r = 0; r < NCT; ++r) {
            const T* __restrict xr = xp + r * V;
            T* __restrict yr = yp + r * V;
            for (std::int64_t u = 0; u < V; ++u) {
                const T xu = xr[u];
                if (xu == T(0)) continue;
                const T* __restrict arow = ap + u * V;
                for (std::int64_t v = 0; v < V; ++v) yr[v] += xu * arow[v];
            }
        }
    }
    const bool rg = requires_grad(x);
    Var out = push(std::move(y), rg, nullptr);
    if (rg) {
        // dx[.,u] = sum_v dy[.,v] A[u,v]
        Tensor<T> a = a_hat;
        node(out).back = [x, out, a, NCT, V](Tape& t) {
            if (!t.requires_grad(x)) return;
            const Tensor<T>& dy = t.grad(out);
            Tensor<T>& dx = t.grad_buf(x);
            for (std::int64_t r = 0; r < NCT; ++r) {
                const T* __restrict dyr = dy.ptr() + r * V;
                T* __restrict dxr = dx.ptr() + r * V;
                for (std::int64_t u = 0; u < V; ++u) {
                    const T* __restrict arow = a.ptr() + u * V;
                    T acc = T(0);
                    for (std::int64_t v = 0; v < V; ++v) acc += dyr[v] * arow[v];
                    dxr[u] += acc;
                }
            }
        };
    }
    return out;
}

// --- normalization ---------------------------------------------------------

template <class T>
typename Tape<T>::Var Tape<T>::batch_norm(Var x, Var gamma, Var beta, Tensor<T>* running_mean,
                                          Tensor<T>* running_var, Mode mode, T momentum, T eps,
                                          bool per_node) {
    const Tensor<T>& xv = val(x);
    require(xv.ndim() == 4, "batch_norm: expects [N,C,T,V]");
    require(xv.dim(0) > 0, "batch_norm: empty batch");
    const std::int64_t N = xv.dim(0), C = xv.dim(1), Tt = xv.dim(2), V = xv.dim(3);
    const std::int64_t Q = per_node ? C * V : C;       // channel count
    const std::int64_t m = per_node ? N * Tt : N * Tt * V;  // samples per channel
    const Tensor<T>& gv = val(gamma);
    const Tensor<T>& bv = val(beta);
    require(gv.size() == Q && bv.size() == Q && running_mean->size() == Q &&
                running_var->size() == Q,
            "batch_norm: affine/running shapes disagree with channel count");

    // channel index of element (n,c,t,v)
    auto chan_of = [per_node, V](std::int64_t c, std::int64_t v) {
        return per_node ? c * V + v : c;
    };

    Tensor<T> mean({Q}, T(0)), invstd({Q}, T(0));
    if (mode == Mode::train) {
        Tensor<T> sum({Q}, T(0)), sumsq({Q}, T(0));
        for (std::int64_t n = 0; n < N; ++n)
            for (std::int64_t c = 0; c < C; ++c)
                for (std::int64_t t = 0; t < Tt; ++t)
                    for (std::int64_t v = 0; v < V; ++v) {
                        const T xval = xv.at4(n, c, t, v);
                        const std::int64_t q = chan_of(c, v);
                        sum[q] += xval;
                        sumsq[q] += xval * xval;
                    }
        for (std::int64_t q = 0; q < Q; ++q) {
            mean[q] = sum[q] / static_cast<T>(m);
            T var = sumsq[q] / static_cast<T>(m) - mean[q] * mean[q];
            if (var < T(0)) var = T(0);
            invstd[q] = T(1) / std::sqrt(var + eps);
            (*running_mean)[q] = (T(1) - momentum) * (*running_mean)[q] + momentum * mean[q];
            (*running_var)[q] = (T(1) - momentum) * (*running_var)[q] + momentum * var;
        }
    } else {
        for (std::int64_t q = 0; q < Q; ++q) {
            mean[q] = (*running_mean)[q];
            invstd[q] = T(1) / std::sqrt((*running_var)[q] + eps);
        }
    }

    Tensor<T> y(xv.shape);
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t t = 0; t < Tt; ++t)
                for (std::int64_t v = 0; v < V; ++v) {
                    const std::int64_t q = chan_of(c, v);
                    y.at4(n, c, t, v) =
                        gv[q] * (xv.at4(n, c, t, v) - mean[q]) * invstd[q] + bv[q];
                }

    const bool rg = requires_grad(x) || requires_grad(gamma) || requires_grad(beta);
    Var out = push(std::move(y), rg, nullptr);
    if (rg) {
        const bool train = mode == Mode::train;
        node(out).back = [x, gamma, beta, out, mean, invstd, per_node, train, N, C, Tt, V, Q,
                          m](Tape& t) {
            const Tensor<T>& dy = t.grad(out);
            const Tensor<T>& xv2 = t.val(x);
            const Tensor<T>& gv2 = t.val(gamma);
            auto chan_of2 = [per_node, V](std::int64_t c, std::int64_t v) {
                return per_node ? c * V + v : c;
            };
            // per-channel reductions: sum(dy) and sum(dy * xhat)
            Tensor<T> dsum({Q}, T(0)), dxs({Q}, T(0));
            for (std::int64_t n = 0; n < N; ++n)
                for (std::int64_t c = 0; c < C; ++c)
                    for (std::int64_t tt = 0; tt < Tt; ++tt)
                        for (std::int64_t v = 0; v < V; ++v) {
                            const std::int64_t q = chan_of2(c, v);
                            const T d = dy.at4(n, c, tt, v);
                            const T xh = (xv2.at4(n, c, tt, v) - mean[q]) * invstd[q];
                            dsum[q] += d;
                            dxs[q] += d * xh;
                        }
            if (t.requires_grad(gamma)) t.accumulate(gamma, dxs);
            if (t.requires_grad(beta)) t.accumulate(beta, dsum);
            if (t.requires_grad(x)) {
                Tensor<T>& dx = t.grad_buf(x);
                const T inv_m = T(1) / static_cast<T>(m);
                for (std::int64_t n = 0; n < N; ++n)
                    for (std::int64_t c = 0; c < C; ++c)
                        for (std::int64_t tt = 0; tt < Tt; ++tt)
                            for (std::int64_t v = 0; v < V; ++v) {
                                const std::int64_t q = chan_of2(c, v);
                                const T d = dy.at4(n, c, tt, v);
                                if (train) {
                                    const T xh =
                                        (xv2.at4(n, c, tt, v) - mean[q]) * invstd[q];
                                    dx.at4(n, c, tt, v) +=
                                        gv2[q] * invstd[q] *
                                        (d - dsum[q] * inv_m - xh * dxs[q] * inv_m);
                                } else {
                                    dx.at4(n, c, tt, v) += gv2[q] * invstd[q] * d;
                                }
                            }
            }
        };
    }
    return out;
}

template <class T>
typename Tape<T>::Var Tape<T>::layer_norm(Var x, Var gain, Var bias, T eps) {
    const Tensor<T>& xv = val(x);
    require(xv.ndim() == 2 && xv.dim(1) >= 2, "layer_norm: expects [N,D] with D >= 2");
    const std::int64_t N = xv.dim(0), D = xv.dim(1);
    const Tensor<T>& gv = val(gain);
    const Tensor<T>& bv = val(bias);
    require(gv.size() == D && bv.size() == D, "layer_norm: affine size mismatch");
    Tensor<T> y(xv.shape);
    Tensor<T> mean({N}), invstd({N});
    for (std::int64_t n = 0; n < N; ++n) {
        T s = T(0), sq = T(0);
        for (std::int64_t d = 0; d < D; ++d) {
            const T v = xv.at2(n, d);
            s += v;
            sq += v * v;
        }
        const T mu = s / static_cast<T>(D);
        T var = sq / static_cast<T>(D) - mu * mu;
        if (var < T(0)) var = T(0);
        mean[n] = mu;
        invstd[n] = T(1) / std::sqrt(var + eps);
        for (std::int64_t d = 0; d < D; ++d)
            y.at2(n, d) = gv[d] * (xv.at2(n, d) - mu) * invstd[n] + bv[d];
    }
    const bool rg = requires_grad(x) || requires_grad(gain) || requires_grad(bias);
    Var out = push(std::move(y), rg, nullptr);
    if (rg) {
        node(out).back = [x, gain, bias, out, mean, invstd, N, D](Tape& t) {
            const Tensor<T>& dy = t.grad(out);
            const Tensor<T>& xv2 = t.val(x);
            const Tensor<T>& gv2 = t.val(gain);
            if (t.requires_grad(gain) || t.requires_grad(bias)) {
                Tensor<T> dg({D}, T(0)), db({D}, T(0));
                for (std::int64_t n = 0; n < N; ++n)
                    for (std::int64_t d = 0; d < D; ++d) {
                        const T xh = (xv2.at2(n, d) - mean[n]) * invstd[n];
                        dg[d] += dy.at2(n, d) * xh;
                        db[d] += dy.at2(n, d);
                    }
                if (t.requires_grad(gain)) t.accumulate(gain, dg);
                if (t.requires_grad(bias)) t.accumulate(bias, db);
            }
            if (t.requires_grad(x)) {
                Tensor<T>& dx = t.grad_buf(x);
                const T inv_d = T(1) / static_cast<T>(D);
                for (std::int64_t n = 0; n < N; ++n) {
                    T hsum = T(0), hxsum = T(0);
                    for (std::int64_t d = 0; d < D; ++d) {
                        const T h = dy.at2(n, d) * gv2[d];
                        const T xh = (xv2.at2(n, d) - mean[n]) * invstd[n];
                        hsum += h;
                        hxsum += h * xh;
                    }
                    for (std::int64_t d = 0; d < D; ++d) {
                        const T h = dy.at2(n, d) * gv2[d];
                        const T xh = (xv2.at2(n, d) - mean[n]) * invstd[n];
                        dx.at2(n, d) +=
                            invstd[n] * (h - hsum * inv_d - xh * hxsum * inv_d);
                    }
                }
            }
        };
    }
    return out;
}

// --- pooling / reshaping ---------------------------------------------------

template <class T>
typename Tape<T>::Var Tape<T>::global_avg_pool(Var x) {
    const Tensor<T>& xv = val(x);
    require(xv.ndim() == 4, "global_avg_pool: expects [N,C,T,V]");
    const std::int64_t N = xv.dim(0), C = xv.dim(1), TV = xv.dim(2) * xv.dim(3);
    Tensor<T> y({N, C});
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t c = 0; c < C; ++c) {
            const T* __restrict xr = xv.ptr() + (n * C + c) * TV;
            T acc = T(0);
            for (std::int64_t i = 0; i < TV; ++i) acc += xr[i];
            y.at2(n, c) = acc / static_cast<T>(TV);
        }
    const bool rg = requires_grad(x);
    Var out = push(std::move(y), rg, nullptr);
    if (rg) {
        node(out).back = [x, out, N, C, TV](Tape& t) {
            if (!t.requires_grad(x)) return;
            const Tensor<T>& dy = t.grad(out);
            Tensor<T>& dx = t.grad_buf(x);
            const T inv = T(1) / static_cast<T>(TV);
            for (std::int64_t n = 0; n < N; ++n)
                for (std::int64_t c = 0; c < C; ++c) {
                    const T d = dy.at2(n, c) * inv;
                    T* __restrict dxr = dx.ptr() + (n * C + c) * TV;
                    for (std::int64_t i = 0; i < TV; ++i) dxr[i] += d;
                }
        };
    }
    return out;
}

template <class T>
typename Tape<T>::Var Tape<T>::concat_cols(Var a, Var b) {
    const Tensor<T>& av = val(a);
    const Tensor<T>& bv = val(b);
    require(av.ndim() == 2 && bv.ndim() == 2 && av.dim(0) == bv.dim(0),
            "concat_cols: row counts disagree");
    const std::int64_t N = av.dim(0), D1 = av.dim(1), D2 = bv.dim(1);
    Tensor<T> y({N, D1 + D2});
    for (std::int64_t n = 0; n < N; ++n) {
        for (std::int64_t d = 0; d < D1; ++d) y.at2(n, d) = av.at2(n, d);
        for (std::int64_t d = 0; d < D2; ++d) y.at2(n, D1 + d) = bv.at2(n, d);
    }
    const bool rg = requires_grad(a) || requires_grad(b);
    Var out = push(std::move(y), rg, nullptr);
    if (rg) {
        node(out).back = [a, b, out, N, D1, D2](Tape& t) {
            const Tensor<T>& dy = t.grad(out);
            if (t.requires_grad(a)) {
                Tensor<T>& da = t.grad_buf(a);
                for (std::int64_t n = 0; n < N; ++n)
                    for (std::int64_t d = 0; d < D1; ++d) da.at2(n, d) += dy.at2(n, d);
            }
            if (t.requires_grad(b)) {
                Tensor<T>& db = t.grad_buf(b);
                for (std::int64_t n = 0; n < N; ++n)
                    for (std::int64_t d = 0; d < D2; ++d) db.at2(n, d) += dy.at2(n, D1 + d);
            }
        };
    }
    return out;
}

template <class T>
typename Tape<T>::Var Tape<T>::rowwise_dot(Var a, Var b) {
    const Tensor<T>& av = val(a);
    const Tensor<T>& bv = val(b);
    require(av.ndim() == 2 && av.same_shape(bv), "rowwise_dot: shapes disagree");
    const std::int64_t N = av.dim(0), D = av.dim(1);
    Tensor<T> y({N});
    for (std::int64_t n = 0; n < N; ++n) {
        T acc = T(0);
        for (std::int64_t d = 0; d < D; ++d) acc += av.at2(n, d) * bv.at2(n, d);
        y[n] = acc;
    }
    const bool rg = requires_grad(a) || requires_grad(b);
    Var out = push(std::move(y), rg, nullptr);
    if (rg) {
        node(out).back = [a, b, out, N, D](Tape& t) {
            const Tensor<T>& dy = t.grad(out);
            if (t.requires_grad(a)) {
                const Tensor<T>& bv2 = t.val(b);
                Tensor<T>& da = t.grad_buf(a);
                for (std::int64_t n = 0; n < N; ++n)
                    for (std::int64_t d = 0; d < D; ++d) da.at2(n, d) += dy[n] * bv2.at2(n, d);
            }
            if (t.requires_grad(b)) {
                const Tensor<T>& av2 = t.val(a);
                Tensor<T>& db = t.grad_buf(b);
                for (std::int64_t n = 0; n < N; ++n)
                    for (std::int64_t d = 0; d < D; ++d) db.at2(n, d) += dy[n] * av2.at2(n, d);
            }
        };
    }
    return out;
}

template <class T>
typename Tape<T>::Var Tape<T>::scale_rows(Var x, Var s) {
    const Tensor<T>& xv = val(x);
    const Tensor<T>& sv = val(s);
    require(xv.ndim() == 2 && sv.ndim() == 1 && sv.dim(0) == xv.dim(0),
            "scale_rows: shapes disagree");
    const std::int64_t N = xv.dim(0), D = xv.dim(1);
    Tensor<T> y(xv.shape);
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t d = 0; d < D; ++d) y.at2(n, d) = xv.at2(n, d) * sv[n];
    const bool rg = requires_grad(x) || requires_grad(s);
    Var out = push(std::move(y), rg, nullptr);
    if (rg) {
        node(out).back = [x, s, out, N, D](Tape& t) {
            const Tensor<T>& dy = t.grad(out);
            if (t.requires_grad(x)) {
                const Tensor<T>& sv2 = t.val(s);
                Tensor<T>& dx = t.grad_buf(x);
                for (std::int64_t n = 0; n < N; ++n)
                    for (std::int64_t d = 0; d < D; ++d) dx.at2(n, d) += dy.at2(n, d) * sv2[n];
            }
            if (t.requires_grad(s)) {
                const Tensor<T>& xv2 = t.val(x);
                Tensor<T>& ds = t.grad_buf(s);
                for (std::int64_t n = 0; n < N; ++n) {
                    T acc = T(0);
                    for (std::int64_t d = 0; d < D; ++d) acc += dy.at2(n, d) * xv2.at2(n, d);
                    ds[n] += acc;
                }
            }
        };
    }
    return out;
}

template <class T>
typename Tape<T>::Var Tape<T>::softmax_cross_entropy(Var logits, const std::vector<int>& labels) {
    return softmax_cross_entropy(logits, labels, {});
}

template <class T>
typename Tape<T>::Var Tape<T>::softmax_cross_entropy(Var logits, const std::vector<int>& labels,
                                                     const std::vector<double>& weights) {
    const Tensor<T>& lv = val(logits);
    require(lv.ndim() == 2, "softmax_cross_entropy: expects [N,K]");
    const std::int64_t N = lv.dim(0), K = lv.dim(1);
    require(static_cast<std::int64_t>(labels.size()) == N,
            "softmax_cross_entropy: label count disagrees with batch");
    for (int y : labels)
        require(y >= 0 && y < K, "softmax_cross_entropy: label out of range");
    std::vector<double> w = weights;
    if (w.empty()) w.assign(static_cast<std::size_t>(N), 1.0);
    require(static_cast<std::int64_t>(w.size()) == N,
            "softmax_cross_entropy: weight count disagrees with batch");
    double sumw = 0.0;
    for (double wi : w) {
        require(std::isfinite(wi) && wi >= 0.0, "softmax_cross_entropy: bad weight");
        sumw += wi;
    }
    require(sumw > 0.0, "softmax_cross_entropy: weights sum to zero");
    Tensor<T> probs({N, K});
    double total = 0.0;
    for (std::int64_t n = 0; n < N; ++n) {
        T mx = lv.at2(n, 0);
        for (std::int64_t j = 1; j < K; ++j) mx = std::max(mx, lv.at2(n, j));
        double denom = 0.0;
        for (std::int64_t j = 0; j < K; ++j)
            denom += std::exp(static_cast<double>(lv.at2(n, j) - mx));
        const double log_denom = std::log(denom);
        for (std::int64_t j = 0; j < K; ++j)
            probs.at2(n, j) =
                static_cast<T>(std::exp(static_cast<double>(lv.at2(n, j) - mx)) / denom);
        const std::int64_t y = labels[static_cast<std::size_t>(n)];
        total += -w[static_cast<std::size_t>(n)] *
                 (static_cast<double>(lv.at2(n, y) - mx) - log_denom);
    }
    const T loss = static_cast<T>(total / sumw);
    const bool rg = requires_grad(logits);
    Var out = push(Tensor<T>::scalar(loss), rg, nullptr);
    if (rg) {
        std::vector<int> lab = labels;
        node(out).back = [logits, out, probs, lab, w, sumw, N, K](Tape& t) {
            if (!t.requires_grad(logits)) return;
            const T g = t.grad(out)[0];
            Tensor<T>& dl = t.grad_buf(logits);
            const T inv_sw = T(1) / static_cast<T>(sumw);
            for (std::int64_t n = 0; n < N; ++n) {
                const T wn = static_cast<T>(w[static_cast<std::size_t>(n)]);
                for (std::int64_t j = 0; j < K; ++j) {
                    T p = probs.at2(n, j);
                    if (j == lab[static_cast<std::size_t>(n)]) p -= T(1);
                    dl.at2(n, j) += g * p * wn * inv_sw;
                }
            }
        };
    }
    return out;
}

template <class T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
    require(logits.ndim() == 2, "softmax_rows: expects [N,K]");
    const std::int64_t N = logits.dim(0), K = logits.dim(1);
    Tensor<T> p(logits.shape);
    for (std::int64_t n = 0; n < N; ++n) {
        T mx = logits.at2(n, 0);
        for (std::int64_t j = 1; j < K; ++j) mx = std::max(mx, logits.at2(n, j));
        double denom = 0.0;
        for (std::int64_t j = 0; j < K; ++j)
            denom += std::exp(static_cast<double>(logits.at2(n, j) - mx));
        for (std::int64_t j = 0; j < K; ++j)
            p.at2(n, j) =
                static_cast<T>(std::exp(static_cast<double>(logits.at2(n, j) - mx)) / denom);
    }
    return p;
}

template class Tape<float>;
template class Tape<double>;
template Tensor<float> softmax_rows<float>(const Tensor<float>&);
template Tensor<double> softmax_rows<double>(const Tensor<double>&);

}  // namespace cpgait::ad
