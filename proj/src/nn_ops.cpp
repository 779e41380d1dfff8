#include "btsnet/nn_ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace btsnet {

namespace {

// Valid output range [lo, hi) for one axis and one kernel tap, such that the
// tap lands inside the unpadded input.
inline void tap_range(int out_extent, int in_extent, int stride, int dilation, int pad,
                      int k, int& lo, int& hi) {
    const int off = k * dilation - pad;  // input pos = out*stride + off
    // out*stride + off >= 0  and  out*stride + off <= in-1
    int l = off >= 0 ? 0 : (-off + stride - 1) / stride;
    int h = (in_extent - 1 - off) / stride;  // inclusive
    if (in_extent - 1 - off < 0) h = -1;
    lo = std::max(0, l);
    hi = std::min(out_extent - 1, h) + 1;
}

struct ConvGeometry {
    int n, cin, cout, groups, cpg, opg;           // channels per group in/out
    std::array<int, 3> in, k, out, stride, dilation, padding;
    std::size_t x_c, x_t, x_h;                    // strides in x
    std::size_t o_c, o_t, o_h;                    // strides in out
    std::size_t w_c, w_t, w_h;                    // strides in weight
};

ConvGeometry conv_geometry(const Tensor& x, const Conv3dParams& p) {
    if (x.rank() != 5) throw std::invalid_argument("conv3d: input must be N x C x T x H x W");
    if (!p.weight || p.weight->rank() != 5)
        throw std::invalid_argument("conv3d: weight must be Cout x Cin/groups x kT x kH x kW");
    for (int a = 0; a < 3; ++a) {
        if (p.stride[a] < 1 || p.dilation[a] < 1 || p.padding[a] < 0)
            throw std::invalid_argument("conv3d: bad stride/dilation/padding");
    }
    ConvGeometry g;
    g.n = x.extent(0);
    g.cin = x.extent(1);
    g.in = {x.extent(2), x.extent(3), x.extent(4)};
    g.cout = p.weight->extent(0);
    g.k = {p.weight->extent(2), p.weight->extent(3), p.weight->extent(4)};
    g.groups = p.groups;
    if (g.groups < 1 || g.cin % g.groups != 0 || g.cout % g.groups != 0)
        throw std::invalid_argument("conv3d: groups must divide both channel counts");
    g.cpg = g.cin / g.groups;
    g.opg = g.cout / g.groups;
    if (p.weight->extent(1) != g.cpg)
        throw std::invalid_argument("conv3d: weight channel extent does not match Cin/groups");
    if (p.bias && (p.bias->rank() != 1 || p.bias->extent(0) != g.cout))
        throw std::invalid_argument("conv3d: bias must have shape Cout");
    g.stride = p.stride;
    g.dilation = p.dilation;
    g.padding = p.padding;
    g.out = conv3d_output_extents(g.in, g.k, p.stride, p.dilation, p.padding);

    g.x_h = static_cast<std::size_t>(g.in[2]);
    g.x_t = g.x_h * static_cast<std::size_t>(g.in[1]);
    g.x_c = g.x_t * static_cast<std::size_t>(g.in[0]);
    g.o_h = static_cast<std::size_t>(g.out[2]);
    g.o_t = g.o_h * static_cast<std::size_t>(g.out[1]);
    g.o_c = g.o_t * static_cast<std::size_t>(g.out[0]);
    g.w_h = static_cast<std::size_t>(g.k[2]);
    g.w_t = g.w_h * static_cast<std::size_t>(g.k[1]);
    g.w_c = g.w_t * static_cast<std::size_t>(g.k[0]);
    return g;
}

}  // namespace

std::array<int, 3> conv3d_output_extents(const std::array<int, 3>& in,
                                         const std::array<int, 3>& kernel,
                                         const std::array<int, 3>& stride,
                                         const std::array<int, 3>& dilation,
                                         const std::array<int, 3>& padding) {
    std::array<int, 3> out{};
    for (int a = 0; a < 3; ++a) {
        const int span = dilation[a] * (kernel[a] - 1) + 1;
        const int num = in[a] + 2 * padding[a] - span;
        out[a] = num < 0 ? 0 : num / stride[a] + 1;
        if (out[a] < 1) throw std::invalid_argument("conv3d: non-positive output extent");
    }
    return out;
}

TensorPtr conv3d(const TensorPtr& x, const Conv3dParams& p) {
    const ConvGeometry g = conv_geometry(*x, p);
    const double* xd = x->data.data();
    const double* wd = p.weight->data.data();

    std::vector<double> out(static_cast<std::size_t>(g.n) * static_cast<std::size_t>(g.cout) * g.o_c, 0.0);

    for (int n = 0; n < g.n; ++n) {
        for (int oc = 0; oc < g.cout; ++oc) {
            double* oslice = out.data() + (static_cast<std::size_t>(n) * g.cout + oc) * g.o_c;
            if (p.bias) {
                const double b = p.bias->data[static_cast<std::size_t>(oc)];
                std::fill(oslice, oslice + g.o_c, b);
            }
            const int grp = oc / g.opg;
            for (int icl = 0; icl < g.cpg; ++icl) {
                const int ic = grp * g.cpg + icl;
                const double* xslice = xd + (static_cast<std::size_t>(n) * g.cin + ic) * g.x_c;
                const double* wslice = wd + (static_cast<std::size_t>(oc) * g.cpg + icl) * g.w_c;
                for (int kt = 0; kt < g.k[0]; ++kt) {
                    int tlo, thi;
                    tap_range(g.out[0], g.in[0], g.stride[0], g.dilation[0], g.padding[0], kt, tlo, thi);
                    for (int kh = 0; kh < g.k[1]; ++kh) {
                        int hlo, hhi;
                        tap_range(g.out[1], g.in[1], g.stride[1], g.dilation[1], g.padding[1], kh, hlo, hhi);
                        for (int kw = 0; kw < g.k[2]; ++kw) {
                            int wlo, whi;
                            tap_range(g.out[2], g.in[2], g.stride[2], g.dilation[2], g.padding[2], kw, wlo, whi);
                            if (wlo >= whi) continue;
                            const double wv = wslice[kt * g.w_t + kh * g.w_h + static_cast<std::size_t>(kw)];
                            for (int ot = tlo; ot < thi; ++ot) {
                                const int it = ot * g.stride[0] + kt * g.dilation[0] - g.padding[0];
                                for (int oh = hlo; oh < hhi; ++oh) {
                                    const int ih = oh * g.stride[1] + kh * g.dilation[1] - g.padding[1];
                                    const double* xrow = xslice + it * g.x_t + ih * g.x_h;
                                    double* orow = oslice + ot * g.o_t + oh * g.o_h;
                                    const int base = kw * g.dilation[2] - g.padding[2];
                                    if (g.stride[2] == 1) {
                                        const double* xr = xrow + base;
                                        for (int ow = wlo; ow < whi; ++ow) orow[ow] += wv * xr[ow];
                                    } else {
                                        for (int ow = wlo; ow < whi; ++ow)
                                            orow[ow] += wv * xrow[ow * g.stride[2] + base];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    std::vector<int> out_shape{g.n, g.cout, g.out[0], g.out[1], g.out[2]};
    std::vector<TensorPtr> parents{x, p.weight};
    if (p.bias) parents.push_back(p.bias);
    TensorPtr px = x, pw = p.weight, pb = p.bias;

    auto backward_fn = [px, pw, pb, g](Tensor& self) {
        const double* go = self.grad.data();
        const double* xd = px->data.data();
        const double* wd = pw->data.data();

        if (px->requires_grad) {
            double* gx = px->grad.data();
            for (int n = 0; n < g.n; ++n) {
                for (int oc = 0; oc < g.cout; ++oc) {
                    const double* goslice = go + (static_cast<std::size_t>(n) * g.cout + oc) * g.o_c;
                    const int grp = oc / g.opg;
                    for (int icl = 0; icl < g.cpg; ++icl) {
                        const int ic = grp * g.cpg + icl;
                        double* gxslice = gx + (static_cast<std::size_t>(n) * g.cin + ic) * g.x_c;
                        const double* wslice = wd + (static_cast<std::size_t>(oc) * g.cpg + icl) * g.w_c;
                        for (int kt = 0; kt < g.k[0]; ++kt) {
                            int tlo, thi;
                            tap_range(g.out[0], g.in[0], g.stride[0], g.dilation[0], g.padding[0], kt, tlo, thi);
                            for (int kh = 0; kh < g.k[1]; ++kh) {
                                int hlo, hhi;
                                tap_range(g.out[1], g.in[1], g.stride[1], g.dilation[1], g.padding[1], kh, hlo, hhi);
                                for (int kw = 0; kw < g.k[2]; ++kw) {
                                    int wlo, whi;
                                    tap_range(g.out[2], g.in[2], g.stride[2], g.dilation[2], g.padding[2], kw, wlo, whi);
                                    if (wlo >= whi) continue;
                                    const double wv = wslice[kt * g.w_t + kh * g.w_h + static_cast<std::size_t>(kw)];
                                    for (int ot = tlo; ot < thi; ++ot) {
                                        const int it = ot * g.stride[0] + kt * g.dilation[0] - g.padding[0];
                                        for (int oh = hlo; oh < hhi; ++oh) {
                                            const int ih = oh * g.stride[1] + kh * g.dilation[1] - g.padding[1];
                                            double* gxrow = gxslice + it * g.x_t + ih * g.x_h;
                                            const double* gorow = goslice + ot * g.o_t + oh * g.o_h;
                                            const int base = kw * g.dilation[2] - g.padding[2];
                                            if (g.stride[2] == 1) {
                                                double* gxr = gxrow + base;
                                                for (int ow = wlo; ow < whi; ++ow) gxr[ow] += wv * gorow[ow];
                                            } else {
                                                for (int ow = wlo; ow < whi; ++ow)
                                                    gxrow[ow * g.stride[2] + base] += wv * gorow[ow];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }

        if (pw->requires_grad) {
            double* gw = pw->grad.data();
            for (int oc = 0; oc < g.cout; ++oc) {
                const int grp = oc / g.opg;
                for (int icl = 0; icl < g.cpg; ++icl) {
                    const int ic = grp * g.cpg + icl;
                    double* gwslice = gw + (static_cast<std::size_t>(oc) * g.cpg + icl) * g.w_c;
                    for (int kt = 0; kt < g.k[0]; ++kt) {
                        int tlo, thi;
                        tap_range(g.out[0], g.in[0], g.stride[0], g.dilation[0], g.padding[0], kt, tlo, thi);
                        for (int kh = 0; kh < g.k[1]; ++kh) {
                            int hlo, hhi;
                            tap_range(g.out[1], g.in[1], g.stride[1], g.dilation[1], g.padding[1], kh, hlo, hhi);
                            for (int kw = 0; kw < g.k[2]; ++kw) {
                                int wlo, whi;
                                tap_range(g.out[2], g.in[2], g.stride[2], g.dilation[2], g.padding[2], kw, wlo, whi);
                                if (wlo >= whi) continue;
                                double acc = 0.0;
                                for (int n = 0; n < g.n; ++n) {
                                    const double* goslice =
                                        go + (static_cast<std::size_t>(n) * g.cout + oc) * g.o_c;
                                    const double* xslice =
                                        xd + (static_cast<std::size_t>(n) * g.cin + ic) * g.x_c;
                                    for (int ot = tlo; ot < thi; ++ot) {
                                        const int it = ot * g.stride[0] + kt * g.dilation[0] - g.padding[0];
                                        for (int oh = hlo; oh < hhi; ++oh) {
                                            const int ih = oh * g.stride[1] + kh * g.dilation[1] - g.padding[1];
                                            const double* xrow = xslice + it * g.x_t + ih * g.x_h;
                                            const double* gorow = goslice + ot * g.o_t + oh * g.o_h;
                                            const int base = kw * g.dilation[2] - g.padding[2];
                                            if (g.stride[2] == 1) {
                                                const double* xr = xrow + base;
                                                for (int ow = wlo; ow < whi; ++ow) acc += gorow[ow] * xr[ow];
                                            } else {
                                                for (int ow = wlo; ow < whi; ++ow)
                                                    acc += gorow[ow] * xrow[ow * g.stride[2] + base];
                                            }
                                        }
                                    }
                                }
                                gwslice[kt * g.w_t + kh * g.w_h + static_cast<std::size_t>(kw)] += acc;
                            }
                        }
                    }
                }
            }
        }

        if (pb && pb->requires_grad) {
            double* gb = pb->grad.data();
            for (int n = 0; n < g.n; ++n) {
                for (int oc = 0; oc < g.cout; ++oc) {
                    const double* goslice = go + (static_cast<std::size_t>(n) * g.cout + oc) * g.o_c;
                    double acc = 0.0;
                    for (std::size_t i = 0; i < g.o_c; ++i) acc += goslice[i];
                    gb[oc] += acc;
                }
            }
        }
    };

    bool rg = false;
    if (grad_enabled()) {
        for (const auto& pr : parents) rg = rg || pr->requires_grad;
    }
    auto t = make_tensor(std::move(out_shape), std::move(out), rg);
    ensure_finite(*t, "conv3d");
    if (rg) {
        t->parents = std::move(parents);
        t->backward_fn = std::move(backward_fn);
    }
    return t;
}

BatchNormParams make_batch_norm(int channels) {
    if (channels < 1) throw std::invalid_argument("make_batch_norm: channels must be >= 1");
    BatchNormParams bn;
    bn.gamma = full({channels}, 1.0, true);
    bn.beta = zeros({channels}, true);
    bn.running_mean.assign(static_cast<std::size_t>(channels), 0.0);
    bn.running_var.assign(static_cast<std::size_t>(channels), 1.0);
    return bn;
}

TensorPtr batch_norm(const TensorPtr& x, BatchNormParams& p) {
    if (x->rank() < 2) throw std::invalid_argument("batch_norm: input rank must be >= 2");
    const int n = x->extent(0), c = x->extent(1);
    std::size_t rest = 1;
    for (int a = 2; a < x->rank(); ++a) rest *= static_cast<std::size_t>(x->extent(a));
    const std::size_t count = static_cast<std::size_t>(n) * rest;  // elements per channel

    if (!p.gamma || !p.beta || p.gamma->size() != static_cast<std::size_t>(c) ||
        p.beta->size() != static_cast<std::size_t>(c))
        throw std::invalid_argument("batch_norm: gamma/beta must have shape C");
    if (p.running_mean.size() != static_cast<std::size_t>(c) ||
        p.running_var.size() != static_cast<std::size_t>(c))
        throw std::invalid_argument("batch_norm: running stats must have shape C");
    if (!(p.epsilon > 0.0)) throw std::invalid_argument("batch_norm: epsilon must be positive");
    if (p.mode == BnMode::Train && count < 2)
        throw std::invalid_argument("batch_norm: train mode needs at least two elements per channel");

    const double* xd = x->data.data();
    std::vector<double> mean(c), inv_std(c);

    if (p.mode == BnMode::Train) {
        for (int ch = 0; ch < c; ++ch) {
            double s = 0.0;
            for (int b = 0; b < n; ++b) {
                const double* row = xd + (static_cast<std::size_t>(b) * c + ch) * rest;
                for (std::size_t r = 0; r < rest; ++r) s += row[r];
            }
            const double mu = s / static_cast<double>(count);
            double v = 0.0;
            for (int b = 0; b < n; ++b) {
                const double* row = xd + (static_cast<std::size_t>(b) * c + ch) * rest;
                for (std::size_t r = 0; r < rest; ++r) {
                    const double d = row[r] - mu;
                    v += d * d;
                }
            }
            v /= static_cast<double>(count);
            mean[ch] = mu;
            inv_std[ch] = 1.0 / std::sqrt(v + p.epsilon);
            p.running_mean[ch] = (1.0 - p.momentum) * p.running_mean[ch] + p.momentum * mu;
            p.running_var[ch] = (1.0 - p.momentum) * p.running_var[ch] + p.momentum * v;
        }
    } else {
        for (int ch = 0; ch < c; ++ch) {
            if (p.running_var[ch] < 0.0) throw std::invalid_argument("batch_norm: negative running variance");
            mean[ch] = p.running_mean[ch];
            inv_std[ch] = 1.0 / std::sqrt(p.running_var[ch] + p.epsilon);
        }
    }

    std::vector<double> out(x->size());
    for (int b = 0; b < n; ++b) {
        for (int ch = 0; ch < c; ++ch) {
            const double* row = xd + (static_cast<std::size_t>(b) * c + ch) * rest;
            double* orow = out.data() + (static_cast<std::size_t>(b) * c + ch) * rest;
            const double mu = mean[ch], inv = inv_std[ch];
            const double gm = p.gamma->data[static_cast<std::size_t>(ch)];
            const double bt = p.beta->data[static_cast<std::size_t>(ch)];
            for (std::size_t r = 0; r < rest; ++r) orow[r] = gm * (row[r] - mu) * inv + bt;
        }
    }

    TensorPtr px = x, pg = p.gamma, pb = p.beta;
    const bool train = p.mode == BnMode::Train;
    auto backward_fn = [px, pg, pb, mean, inv_std, n, c, rest, count, train](Tensor& self) {
        const double* go = self.grad.data();
        const double* xd = px->data.data();
        // Per-channel reductions of the upstream gradient.
        std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
        for (int b = 0; b < n; ++b) {
            for (int ch = 0; ch < c; ++ch) {
                const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * rest;
                const double mu = mean[ch], inv = inv_std[ch];
                double s = 0.0, sx = 0.0;
                for (std::size_t r = 0; r < rest; ++r) {
                    const double dy = go[off + r];
                    s += dy;
                    sx += dy * (xd[off + r] - mu) * inv;
                }
                sum_dy[ch] += s;
                sum_dy_xhat[ch] += sx;
            }
        }
        if (pg->requires_grad)
            for (int ch = 0; ch < c; ++ch) pg->grad[ch] += sum_dy_xhat[ch];
        if (pb->requires_grad)
            for (int ch = 0; ch < c; ++ch) pb->grad[ch] += sum_dy[ch];
        if (px->requires_grad) {
            double* gx = px->grad.data();
            const double rcount = 1.0 / static_cast<double>(count);
            for (int b = 0; b < n; ++b) {
                for (int ch = 0; ch < c; ++ch) {
                    const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * rest;
                    const double mu = mean[ch], inv = inv_std[ch];
                    const double gm = pg->data[static_cast<std::size_t>(ch)];
                    if (train) {
                        const double k1 = sum_dy[ch] * rcount;
                        const double k2 = sum_dy_xhat[ch] * rcount;
                        for (std::size_t r = 0; r < rest; ++r) {
                            const double xhat = (xd[off + r] - mu) * inv;
                            gx[off + r] += gm * inv * (go[off + r] - k1 - xhat * k2);
                        }
                    } else {
                        for (std::size_t r = 0; r < rest; ++r) gx[off + r] += gm * inv * go[off + r];
                    }
                }
            }
        }
    };

    bool rg = grad_enabled() && (x->requires_grad || p.gamma->requires_grad || p.beta->requires_grad);
    auto t = make_tensor(x->shape, std::move(out), rg);
    ensure_finite(*t, "batch_norm");
    if (rg) {
        t->parents = {x, p.gamma, p.beta};
        t->backward_fn = std::move(backward_fn);
    }
    return t;
}

TensorPtr relu(const TensorPtr& x) {
    std::vector<double> out(x->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x->data[i] > 0.0 ? x->data[i] : 0.0;
    TensorPtr px = x;
    bool rg = grad_enabled() && x->requires_grad;
    auto t = make_tensor(x->shape, std::move(out), rg);
    if (rg) {
        t->parents = {x};
        t->backward_fn = [px](Tensor& self) {
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                if (px->data[i] > 0.0) px->grad[i] += self.grad[i];
        };
    }
    return t;
}

TensorPtr gap_spatial(const TensorPtr& u) {
    if (u->rank() != 5) throw std::invalid_argument("gap_spatial: input must be N x C x T x H x W");
    const int n = u->extent(0), c = u->extent(1), tt = u->extent(2);
    const std::size_t hw = static_cast<std::size_t>(u->extent(3)) * static_cast<std::size_t>(u->extent(4));
    std::vector<double> out(static_cast<std::size_t>(n) * c * tt);
    const double scale = 1.0 / static_cast<double>(hw);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double* row = u->data.data() + i * hw;
        double s = 0.0;
        for (std::size_t r = 0; r < hw; ++r) s += row[r];
        out[i] = s * scale;
    }
    TensorPtr pu = u;
    bool rg = grad_enabled() && u->requires_grad;
    auto t = make_tensor({n, c, tt}, std::move(out), rg);
    ensure_finite(*t, "gap_spatial");
    if (rg) {
        t->parents = {u};
        t->backward_fn = [pu, hw, scale](Tensor& self) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                const double g = self.grad[i] * scale;
                double* row = pu->grad.data() + i * hw;
                for (std::size_t r = 0; r < hw; ++r) row[r] += g;
            }
        };
    }
    return t;
}

TensorPtr gap_spatiotemporal(const TensorPtr& u) {
    if (u->rank() != 5) throw std::invalid_argument("gap_spatiotemporal: input must be N x C x T x H x W");
    const int n = u->extent(0), c = u->extent(1);
    const std::size_t thw = static_cast<std::size_t>(u->extent(2)) *
                            static_cast<std::size_t>(u->extent(3)) *
                            static_cast<std::size_t>(u->extent(4));
    std::vector<double> out(static_cast<std::size_t>(n) * c);
    const double scale = 1.0 / static_cast<double>(thw);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double* row = u->data.data() + i * thw;
        double s = 0.0;
        for (std::size_t r = 0; r < thw; ++r) s += row[r];
        out[i] = s * scale;
    }
    TensorPtr pu = u;
    bool rg = grad_enabled() && u->requires_grad;
    auto t = make_tensor({n, c}, std::move(out), rg);
    ensure_finite(*t, "gap_spatiotemporal");
    if (rg) {
        t->parents = {u};
        t->backward_fn = [pu, thw, scale](Tensor& self) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                const double g = self.grad[i] * scale;
                double* row = pu->grad.data() + i * thw;
                for (std::size_t r = 0; r < thw; ++r) row[r] += g;
            }
        };
    }
    return t;
}

TensorPtr pointwise_conv(const TensorPtr& x, const TensorPtr& weight, const TensorPtr& bias) {
    if (x->rank() < 2) throw std::invalid_argument("pointwise_conv: input rank must be >= 2");
    if (!weight || weight->rank() != 2) throw std::invalid_argument("pointwise_conv: weight must be Cout x Cin");
    const int n = x->extent(0), cin = x->extent(1);
    const int cout = weight->extent(0);
    if (weight->extent(1) != cin) throw std::invalid_argument("pointwise_conv: channel mismatch");
    if (bias && (bias->rank() != 1 || bias->extent(0) != cout))
        throw std::invalid_argument("pointwise_conv: bias must have shape Cout");
    std::size_t rest = 1;
    for (int a = 2; a < x->rank(); ++a) rest *= static_cast<std::size_t>(x->extent(a));

    std::vector<int> out_shape = x->shape;
    out_shape[1] = cout;
    std::vector<double> out(static_cast<std::size_t>(n) * cout * rest, 0.0);
    const double* xd = x->data.data();
    const double* wd = weight->data.data();
    for (int b = 0; b < n; ++b) {
        for (int co = 0; co < cout; ++co) {
            double* orow = out.data() + (static_cast<std::size_t>(b) * cout + co) * rest;
            if (bias) {
                const double bv = bias->data[static_cast<std::size_t>(co)];
                for (std::size_t r = 0; r < rest; ++r) orow[r] = bv;
            }
            for (int ci = 0; ci < cin; ++ci) {
                const double wv = wd[static_cast<std::size_t>(co) * cin + ci];
                const double* xrow = xd + (static_cast<std::size_t>(b) * cin + ci) * rest;
                for (std::size_t r = 0; r < rest; ++r) orow[r] += wv * xrow[r];
            }
        }
    }

    TensorPtr px = x, pw = weight, pb = bias;
    std::vector<TensorPtr> parents{x, weight};
    if (bias) parents.push_back(bias);
    auto backward_fn = [px, pw, pb, n, cin, cout, rest](Tensor& self) {
        const double* go = self.grad.data();
        const double* xd = px->data.data();
        const double* wd = pw->data.data();
        if (px->requires_grad) {
            double* gx = px->grad.data();
            for (int b = 0; b < n; ++b) {
                for (int co = 0; co < cout; ++co) {
                    const double* gorow = go + (static_cast<std::size_t>(b) * cout + co) * rest;
                    for (int ci = 0; ci < cin; ++ci) {
                        const double wv = wd[static_cast<std::size_t>(co) * cin + ci];
                        double* gxrow = gx + (static_cast<std::size_t>(b) * cin + ci) * rest;
                        for (std::size_t r = 0; r < rest; ++r) gxrow[r] += wv * gorow[r];
                    }
                }
            }
        }
        if (pw->requires_grad) {
            double* gw = pw->grad.data();
            for (int co = 0; co < cout; ++co) {
                for (int ci = 0; ci < cin; ++ci) {
                    double acc = 0.0;
                    for (int b = 0; b < n; ++b) {
                        const double* gorow = go + (static_cast<std::size_t>(b) * cout + co) * rest;
                        const double* xrow = xd + (static_cast<std::size_t>(b) * cin + ci) * rest;
                        for (std::size_t r = 0; r < rest; ++r) acc += gorow[r] * xrow[r];
                    }
                    gw[static_cast<std::size_t>(co) * cin + ci] += acc;
                }
            }
        }
        if (pb && pb->requires_grad) {
            double* gb = pb->grad.data();
            for (int b = 0; b < n; ++b) {
                for (int co = 0; co < cout; ++co) {
                    const double* gorow = go + (static_cast<std::size_t>(b) * cout + co) * rest;
                    double acc = 0.0;
                    for (std::size_t r = 0; r < rest; ++r) acc += gorow[r];
                    gb[co] += acc;
                }
            }
        }
    };

    bool rg = false;
    if (grad_enabled()) {
        for (const auto& pr : parents) rg = rg || pr->requires_grad;
    }
    auto t = make_tensor(std::move(out_shape), std::move(out), rg);
    ensure_finite(*t, "pointwise_conv");
    if (rg) {
        t->parents = std::move(parents);
        t->backward_fn = std::move(backward_fn);
    }
    return t;
}

TensorPtr softmax_over_pathways(const TensorPtr& z) {
    if (z->rank() < 2) throw std::invalid_argument("softmax_over_pathways: input rank must be >= 2");
    const int n = z->extent(0), m = z->extent(1);
    std::size_t rest = 1;
    for (int a = 2; a < z->rank(); ++a) rest *= static_cast<std::size_t>(z->extent(a));

    std::vector<double> out(z->size());
    const double* zd = z->data.data();
    for (int b = 0; b < n; ++b) {
        const std::size_t base = static_cast<std::size_t>(b) * m * rest;
        for (std::size_t r = 0; r < rest; ++r) {
            double mx = zd[base + r];
            for (int i = 1; i < m; ++i) mx = std::max(mx, zd[base + static_cast<std::size_t>(i) * rest + r]);
            double s = 0.0;
            for (int i = 0; i < m; ++i) {
                const double e = std::exp(zd[base + static_cast<std::size_t>(i) * rest + r] - mx);
                out[base + static_cast<std::size_t>(i) * rest + r] = e;
                s += e;
            }
            const double inv = 1.0 / s;
            for (int i = 0; i < m; ++i) out[base + static_cast<std::size_t>(i) * rest + r] *= inv;
        }
    }

    TensorPtr pz = z;
    bool rg = grad_enabled() && z->requires_grad;
    auto t = make_tensor(z->shape, std::move(out), rg);
    ensure_finite(*t, "softmax_over_pathways");
    if (rg) {
        t->parents = {z};
        t->backward_fn = [pz, n, m, rest](Tensor& self) {
            const double* y = self.data.data();
            const double* go = self.grad.data();
            double* gz = pz->grad.data();
            for (int b = 0; b < n; ++b) {
                const std::size_t base = static_cast<std::size_t>(b) * m * rest;
                for (std::size_t r = 0; r < rest; ++r) {
                    double dot = 0.0;
                    for (int i = 0; i < m; ++i) {
                        const std::size_t k = base + static_cast<std::size_t>(i) * rest + r;
                        dot += go[k] * y[k];
                    }
                    for (int i = 0; i < m; ++i) {
                        const std::size_t k = base + static_cast<std::size_t>(i) * rest + r;
                        gz[k] += y[k] * (go[k] - dot);
                    }
                }
            }
        };
    }
    return t;
}

TensorPtr cross_entropy_with_logits(const TensorPtr& logits, const std::vector<int>& labels) {
    if (logits->rank() != 2) throw std::invalid_argument("cross_entropy: logits must be N x K");
    const int n = logits->extent(0), k = logits->extent(1);
    if (static_cast<int>(labels.size()) != n) throw std::invalid_argument("cross_entropy: label count mismatch");
    for (int lab : labels) {
        if (lab < 0 || lab >= k) throw std::invalid_argument("cross_entropy: label out of range");
    }

    std::vector<double> soft(logits->size());
    double loss = 0.0;
    const double* zd = logits->data.data();
    for (int b = 0; b < n; ++b) {
        const double* row = zd + static_cast<std::size_t>(b) * k;
        double mx = row[0];
        for (int i = 1; i < k; ++i) mx = std::max(mx, row[i]);
        double s = 0.0;
        for (int i = 0; i < k; ++i) s += std::exp(row[i] - mx);
        const double lse = std::log(s) + mx;
        loss += lse - row[labels[static_cast<std::size_t>(b)]];
        for (int i = 0; i < k; ++i)
            soft[static_cast<std::size_t>(b) * k + i] = std::exp(row[i] - lse);
    }
    loss /= static_cast<double>(n);

    TensorPtr pz = logits;
    std::vector<int> labs = labels;
    bool rg = grad_enabled() && logits->requires_grad;
    auto t = make_tensor({1}, {loss}, rg);
    ensure_finite(*t, "cross_entropy_with_logits");
    if (rg) {
        t->parents = {logits};
        t->backward_fn = [pz, soft = std::move(soft), labs = std::move(labs), n, k](Tensor& self) {
            const double g = self.grad[0] / static_cast<double>(n);
            double* gz = pz->grad.data();
            for (int b = 0; b < n; ++b) {
                for (int i = 0; i < k; ++i) {
                    const std::size_t idx = static_cast<std::size_t>(b) * k + i;
                    gz[idx] += g * (soft[idx] - (labs[static_cast<std::size_t>(b)] == i ? 1.0 : 0.0));
                }
            }
        };
    }
    return t;
}

}  // namespace btsnet
