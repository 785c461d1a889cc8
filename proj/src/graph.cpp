#include "lfc/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <unordered_set>

#include "lfc/errors.hpp"

namespace lfc {

namespace {

Value make_node(Tensor4 v) {
    auto node = std::make_shared<Node>();
    node->value = std::move(v);
    return node;
}

bool any_requires_grad(const std::vector<Value>& inputs) {
    for (const auto& in : inputs) {
        if (in && in->requires_grad) return true;
    }
    return false;
}

void finish_op(const Value& node, std::vector<Value> inputs, std::function<void(Node&)> fn) {
    node->requires_grad = any_requires_grad(inputs);
    node->inputs = std::move(inputs);
    if (node->requires_grad) node->backprop = std::move(fn);
}

// Copies a (c,h,w) sample into a zero-padded scratch buffer of planes
// (c, h+2p, w+2p).
void pad_sample(const Tensor4& t, int sample, int pad, std::vector<double>& scratch) {
    const int ph = t.h + 2 * pad;
    const int pw = t.w + 2 * pad;
    scratch.assign(static_cast<std::size_t>(t.c) * ph * pw, 0.0);
    for (int ci = 0; ci < t.c; ++ci) {
        const double* src = t.plane(sample, ci);
        double* dst = scratch.data() + static_cast<std::size_t>(ci) * ph * pw;
        for (int y = 0; y < t.h; ++y) {
            std::copy(src + static_cast<std::size_t>(y) * t.w,
                      src + static_cast<std::size_t>(y + 1) * t.w,
                      dst + static_cast<std::size_t>(y + pad) * pw + pad);
        }
    }
}

struct ConvDims {
    int k, out_h, out_w, ph, pw;
};

ConvDims conv_dims(const Tensor4& in, const Tensor4& w, int stride, int padding) {
    if (w.h != w.w) {
        throw ConfigError("conv2d: kernel must be square, got " + w.shape_str());
    }
    if (in.c != w.c) {
        throw ConfigError("conv2d: input channels " + in.shape_str() +
                          " do not match kernel " + w.shape_str());
    }
    if (stride < 1 || padding < 0) {
        throw ConfigError("conv2d: stride must be >= 1 and padding >= 0");
    }
    ConvDims d;
    d.k = w.h;
    d.ph = in.h + 2 * padding;
    d.pw = in.w + 2 * padding;
    d.out_h = (d.ph - d.k) / stride + 1;
    d.out_w = (d.pw - d.k) / stride + 1;
    if (d.ph < d.k || d.pw < d.k) {
        throw ConfigError("conv2d: kernel " + w.shape_str() + " larger than padded input " +
                          in.shape_str());
    }
    return d;
}

void conv2d_forward(const Tensor4& in, const Tensor4& w, const Tensor4& bias, int stride,
                    int padding, Tensor4& out) {
    const ConvDims d = conv_dims(in, w, stride, padding);
    out = Tensor4(in.n, w.n, d.out_h, d.out_w);
    std::vector<double> padded;
    for (int s = 0; s < in.n; ++s) {
        pad_sample(in, s, padding, padded);
        for (int co = 0; co < w.n; ++co) {
            double* out_plane = out.plane(s, co);
            const double b = bias.data[co];
            std::fill(out_plane, out_plane + static_cast<std::size_t>(d.out_h) * d.out_w, b);
            for (int ci = 0; ci < in.c; ++ci) {
                const double* pad_plane =
                    padded.data() + static_cast<std::size_t>(ci) * d.ph * d.pw;
                for (int ky = 0; ky < d.k; ++ky) {
                    for (int kx = 0; kx < d.k; ++kx) {
                        const double wv = w.at(co, ci, ky, kx);
                        for (int oy = 0; oy < d.out_h; ++oy) {
                            const double* src = pad_plane +
                                static_cast<std::size_t>(oy * stride + ky) * d.pw + kx;
                            double* dst = out_plane + static_cast<std::size_t>(oy) * d.out_w;
                            if (stride == 1) {
                                for (int ox = 0; ox < d.out_w; ++ox) dst[ox] += wv * src[ox];
                            } else {
                                for (int ox = 0; ox < d.out_w; ++ox)
                                    dst[ox] += wv * src[static_cast<std::size_t>(ox) * stride];
                            }
                        }
                    }
                }
            }
        }
    }
}

void conv2d_backward(const Tensor4& in, const Tensor4& w, int stride, int padding,
                     const Tensor4& dout, Tensor4* din, Tensor4* dw, Tensor4* dbias) {
    const ConvDims d = conv_dims(in, w, stride, padding);
    std::vector<double> padded;
    std::vector<double> padded_din;
    for (int s = 0; s < in.n; ++s) {
        if (dw != nullptr) pad_sample(in, s, padding, padded);
        if (din != nullptr) {
            padded_din.assign(static_cast<std::size_t>(in.c) * d.ph * d.pw, 0.0);
        }
        for (int co = 0; co < w.n; ++co) {
            const double* dout_plane = dout.plane(s, co);
            if (dbias != nullptr) {
                double acc = 0.0;
                const std::size_t count = static_cast<std::size_t>(d.out_h) * d.out_w;
                for (std::size_t i = 0; i < count; ++i) acc += dout_plane[i];
                dbias->data[co] += acc;
            }
            for (int ci = 0; ci < in.c; ++ci) {
                const std::size_t plane_off = static_cast<std::size_t>(ci) * d.ph * d.pw;
                for (int ky = 0; ky < d.k; ++ky) {
                    for (int kx = 0; kx < d.k; ++kx) {
                        if (dw != nullptr) {
                            const double* pad_plane = padded.data() + plane_off;
                            double acc = 0.0;
                            for (int oy = 0; oy < d.out_h; ++oy) {
                                const double* src = pad_plane +
                                    static_cast<std::size_t>(oy * stride + ky) * d.pw + kx;
                                const double* dp =
                                    dout_plane + static_cast<std::size_t>(oy) * d.out_w;
                                if (stride == 1) {
                                    for (int ox = 0; ox < d.out_w; ++ox) acc += dp[ox] * src[ox];
                                } else {
                                    for (int ox = 0; ox < d.out_w; ++ox)
                                        acc += dp[ox] * src[static_cast<std::size_t>(ox) * stride];
                                }
                            }
                            dw->at(co, ci, ky, kx) += acc;
                        }
                        if (din != nullptr) {
                            double* pad_plane = padded_din.data() + plane_off;
                            const double wv = w.at(co, ci, ky, kx);
                            for (int oy = 0; oy < d.out_h; ++oy) {
                                double* pd = pad_plane +
                                    static_cast<std::size_t>(oy * stride + ky) * d.pw + kx;
                                const double* dp =
                                    dout_plane + static_cast<std::size_t>(oy) * d.out_w;
                                if (stride == 1) {
                                    for (int ox = 0; ox < d.out_w; ++ox) pd[ox] += wv * dp[ox];
                                } else {
                                    for (int ox = 0; ox < d.out_w; ++ox)
                                        pd[static_cast<std::size_t>(ox) * stride] += wv * dp[ox];
                                }
                            }
                        }
                    }
                }
            }
        }
        if (din != nullptr) {
            for (int ci = 0; ci < in.c; ++ci) {
                const double* pad_plane =
                    padded_din.data() + static_cast<std::size_t>(ci) * d.ph * d.pw;
                double* dst = din->plane(s, ci);
                for (int y = 0; y < in.h; ++y) {
                    const double* row = pad_plane + static_cast<std::size_t>(y + padding) * d.pw +
                        padding;
                    double* drow = dst + static_cast<std::size_t>(y) * in.w;
                    for (int x = 0; x < in.w; ++x) drow[x] += row[x];
                }
            }
        }
    }
}

}  // namespace

Value constant(Tensor4 v) { return make_node(std::move(v)); }

Value param_leaf(Parameter& p) {
    auto node = make_node(p.value);
    node->requires_grad = true;
    node->bound_param = &p;
    return node;
}

Value conv2d(const Value& input, const Value& weight, const Value& bias, int stride, int padding) {
    const Tensor4& in = input->value;
    const Tensor4& w = weight->value;
    if (bias->value.numel() != w.n) {
        throw ConfigError("conv2d: bias " + bias->value.shape_str() + " does not match kernel " +
                          w.shape_str());
    }
    Tensor4 out;
    conv2d_forward(in, w, bias->value, stride, padding, out);
    auto node = make_node(std::move(out));
    finish_op(node, {input, weight, bias}, [stride, padding](Node& self) {
        const Value& in_v = self.inputs[0];
        const Value& w_v = self.inputs[1];
        const Value& b_v = self.inputs[2];
        Tensor4* din = in_v->requires_grad ? &in_v->ensure_grad() : nullptr;
        Tensor4* dw = w_v->requires_grad ? &w_v->ensure_grad() : nullptr;
        Tensor4* db = b_v->requires_grad ? &b_v->ensure_grad() : nullptr;
        conv2d_backward(in_v->value, w_v->value, stride, padding, self.grad, din, dw, db);
    });
    return node;
}

Value batchnorm(const Value& input, BatchNormState& state, const Value& gamma, const Value& beta,
                BnMode mode) {
    const Tensor4& in = input->value;
    if (in.c != state.channels()) {
        throw ConfigError("batchnorm: input " + in.shape_str() + " does not match state with " +
                          std::to_string(state.channels()) + " channels");
    }
    const std::int64_t pixels = static_cast<std::int64_t>(in.n) * in.h * in.w;
    if (pixels == 0) {
        throw DegenerateInputError("batchnorm: zero batch-pixel count for input " + in.shape_str());
    }
    // A recalibrating state accumulates regardless of the requested mode.
    if (state.mode == BnMode::recalibrate) mode = BnMode::recalibrate;

    const int C = in.c;
    const std::size_t plane = static_cast<std::size_t>(in.h) * in.w;
    std::vector<double> mu(C), inv_std(C);

    if (mode == BnMode::train) {
        const double inv_m = 1.0 / static_cast<double>(pixels);
        for (int ci = 0; ci < C; ++ci) {
            double s1 = 0.0, s2 = 0.0;
            for (int s = 0; s < in.n; ++s) {
                const double* p = in.plane(s, ci);
                for (std::size_t i = 0; i < plane; ++i) {
                    s1 += p[i];
                    s2 += p[i] * p[i];
                }
            }
            const double mean = s1 * inv_m;
            const double var = std::max(s2 * inv_m - mean * mean, 0.0);
            mu[ci] = mean;
            inv_std[ci] = 1.0 / std::sqrt(var + state.eps);
            state.running_mean.data[ci] =
                (1.0 - state.momentum) * state.running_mean.data[ci] + state.momentum * mean;
            state.running_var.data[ci] =
                std::max((1.0 - state.momentum) * state.running_var.data[ci] +
                             state.momentum * var,
                         1e-12);
        }
    } else {
        if (mode == BnMode::recalibrate) {
            for (int ci = 0; ci < C; ++ci) {
                double s1 = 0.0, s2 = 0.0;
                for (int s = 0; s < in.n; ++s) {
                    const double* p = in.plane(s, ci);
                    for (std::size_t i = 0; i < plane; ++i) {
                        s1 += p[i];
                        s2 += p[i] * p[i];
                    }
                }
                state.recal_sum.data[ci] += s1;
                state.recal_sumsq.data[ci] += s2;
            }
            state.recal_count += pixels;
        }
        for (int ci = 0; ci < C; ++ci) {
            mu[ci] = state.running_mean.data[ci];
            inv_std[ci] = 1.0 / std::sqrt(state.running_var.data[ci] + state.eps);
        }
    }

    Tensor4 out(in.n, in.c, in.h, in.w);
    for (int s = 0; s < in.n; ++s) {
        for (int ci = 0; ci < C; ++ci) {
            const double g = gamma->value.data[ci];
            const double b = beta->value.data[ci];
            const double m = mu[ci];
            const double is = inv_std[ci];
            const double* src = in.plane(s, ci);
            double* dst = out.plane(s, ci);
            for (std::size_t i = 0; i < plane; ++i) dst[i] = g * (src[i] - m) * is + b;
        }
    }

    auto node = make_node(std::move(out));
    const bool batch_stats = (mode == BnMode::train);
    finish_op(node, {input, gamma, beta},
              [mu = std::move(mu), inv_std = std::move(inv_std), batch_stats](Node& self) {
        const Value& in_v = self.inputs[0];
        const Value& g_v = self.inputs[1];
        const Value& b_v = self.inputs[2];
        const Tensor4& in = in_v->value;
        const Tensor4& dy = self.grad;
        const int C = in.c;
        const std::size_t plane = static_cast<std::size_t>(in.h) * in.w;
        const double inv_m = 1.0 / (static_cast<double>(in.n) * in.h * in.w);
        for (int ci = 0; ci < C; ++ci) {
            const double g = g_v->value.data[ci];
            const double m = mu[ci];
            const double is = inv_std[ci];
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (int s = 0; s < in.n; ++s) {
                const double* x = in.plane(s, ci);
                const double* d = dy.plane(s, ci);
                for (std::size_t i = 0; i < plane; ++i) {
                    sum_dy += d[i];
                    sum_dy_xhat += d[i] * (x[i] - m) * is;
                }
            }
            if (g_v->requires_grad) g_v->ensure_grad().data[ci] += sum_dy_xhat;
            if (b_v->requires_grad) b_v->ensure_grad().data[ci] += sum_dy;
            if (in_v->requires_grad) {
                Tensor4& dx = in_v->ensure_grad();
                if (batch_stats) {
                    const double mean_dy = sum_dy * inv_m;
                    const double mean_dy_xhat = sum_dy_xhat * inv_m;
                    for (int s = 0; s < in.n; ++s) {
                        const double* x = in.plane(s, ci);
                        const double* d = dy.plane(s, ci);
                        double* o = dx.plane(s, ci);
                        for (std::size_t i = 0; i < plane; ++i) {
                            const double xhat = (x[i] - m) * is;
                            o[i] += g * is * (d[i] - mean_dy - xhat * mean_dy_xhat);
                        }
                    }
                } else {
                    for (int s = 0; s < in.n; ++s) {
                        const double* d = dy.plane(s, ci);
                        double* o = dx.plane(s, ci);
                        for (std::size_t i = 0; i < plane; ++i) o[i] += g * is * d[i];
                    }
                }
            }
        }
    });
    return node;
}

Value relu(const Value& input) {
    const Tensor4& in = input->value;
    Tensor4 out = in;
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    auto node = make_node(std::move(out));
    finish_op(node, {input}, [](Node& self) {
        const Value& in_v = self.inputs[0];
        if (!in_v->requires_grad) return;
        Tensor4& dx = in_v->ensure_grad();
        const Tensor4& x = in_v->value;
        for (std::size_t i = 0; i < dx.data.size(); ++i) {
            if (x.data[i] > 0.0) dx.data[i] += self.grad.data[i];
        }
    });
    return node;
}

Value maxpool2x2(const Value& input) {
    const Tensor4& in = input->value;
    if (in.h % 2 != 0 || in.w % 2 != 0) {
        throw ConfigError("maxpool2x2: spatial dims must be even, got " + in.shape_str());
    }
    const int oh = in.h / 2, ow = in.w / 2;
    Tensor4 out(in.n, in.c, oh, ow);
    auto argmax = std::make_shared<std::vector<std::uint32_t>>(out.data.size());
    std::size_t oi = 0;
    for (int s = 0; s < in.n; ++s) {
        for (int ci = 0; ci < in.c; ++ci) {
            const double* src = in.plane(s, ci);
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox, ++oi) {
                    const std::size_t base = static_cast<std::size_t>(2 * oy) * in.w + 2 * ox;
                    std::size_t best = base;
                    double bv = src[base];
                    const std::size_t cands[3] = {base + 1, base + in.w, base + in.w + 1};
                    for (std::size_t cand : cands) {
                        if (src[cand] > bv) {
                            bv = src[cand];
                            best = cand;
                        }
                    }
                    out.data[oi] = bv;
                    (*argmax)[oi] = static_cast<std::uint32_t>(best);
                }
            }
        }
    }
    auto node = make_node(std::move(out));
    finish_op(node, {input}, [argmax](Node& self) {
        const Value& in_v = self.inputs[0];
        if (!in_v->requires_grad) return;
        Tensor4& dx = in_v->ensure_grad();
        const Tensor4& in = in_v->value;
        const std::size_t plane_in = static_cast<std::size_t>(in.h) * in.w;
        const std::size_t plane_out = self.grad.data.size() / (static_cast<std::size_t>(in.n) * in.c);
        std::size_t oi = 0;
        for (int s = 0; s < in.n; ++s) {
            for (int ci = 0; ci < in.c; ++ci) {
                double* dplane = dx.plane(s, ci);
                for (std::size_t i = 0; i < plane_out; ++i, ++oi) {
                    dplane[(*argmax)[oi]] += self.grad.data[oi];
                }
            }
        }
        (void)plane_in;
    });
    return node;
}

Value upsample2x_nearest(const Value& input) {
    const Tensor4& in = input->value;
    Tensor4 out(in.n, in.c, in.h * 2, in.w * 2);
    for (int s = 0; s < in.n; ++s) {
        for (int ci = 0; ci < in.c; ++ci) {
            const double* src = in.plane(s, ci);
            double* dst = out.plane(s, ci);
            for (int y = 0; y < in.h; ++y) {
                for (int x = 0; x < in.w; ++x) {
                    const double v = src[static_cast<std::size_t>(y) * in.w + x];
                    const std::size_t o = static_cast<std::size_t>(2 * y) * out.w + 2 * x;
                    dst[o] = v;
                    dst[o + 1] = v;
                    dst[o + out.w] = v;
                    dst[o + out.w + 1] = v;
                }
            }
        }
    }
    auto node = make_node(std::move(out));
    finish_op(node, {input}, [](Node& self) {
        const Value& in_v = self.inputs[0];
        if (!in_v->requires_grad) return;
        Tensor4& dx = in_v->ensure_grad();
        const Tensor4& in = in_v->value;
        const int ow = in.w * 2;
        for (int s = 0; s < in.n; ++s) {
            for (int ci = 0; ci < in.c; ++ci) {
                const double* g = self.grad.plane(s, ci);
                double* d = dx.plane(s, ci);
                for (int y = 0; y < in.h; ++y) {
                    for (int x = 0; x < in.w; ++x) {
                        const std::size_t o = static_cast<std::size_t>(2 * y) * ow + 2 * x;
                        d[static_cast<std::size_t>(y) * in.w + x] +=
                            g[o] + g[o + 1] + g[o + ow] + g[o + ow + 1];
                    }
                }
            }
        }
    });
    return node;
}

Value concat_channels(const Value& a, const Value& b) {
    const Tensor4& ta = a->value;
    const Tensor4& tb = b->value;
    if (ta.n != tb.n || ta.h != tb.h || ta.w != tb.w) {
        throw ConfigError("concat_channels: incompatible shapes " + ta.shape_str() + " vs " +
                          tb.shape_str());
    }
    Tensor4 out(ta.n, ta.c + tb.c, ta.h, ta.w);
    const std::size_t plane = static_cast<std::size_t>(ta.h) * ta.w;
    for (int s = 0; s < ta.n; ++s) {
        for (int ci = 0; ci < ta.c; ++ci) {
            std::copy(ta.plane(s, ci), ta.plane(s, ci) + plane, out.plane(s, ci));
        }
        for (int ci = 0; ci < tb.c; ++ci) {
            std::copy(tb.plane(s, ci), tb.plane(s, ci) + plane, out.plane(s, ta.c + ci));
        }
    }
    auto node = make_node(std::move(out));
    finish_op(node, {a, b}, [](Node& self) {
        const Value& a_v = self.inputs[0];
        const Value& b_v = self.inputs[1];
        const Tensor4& ta = a_v->value;
        const Tensor4& tb = b_v->value;
        const std::size_t plane = static_cast<std::size_t>(ta.h) * ta.w;
        for (int s = 0; s < ta.n; ++s) {
            if (a_v->requires_grad) {
                Tensor4& da = a_v->ensure_grad();
                for (int ci = 0; ci < ta.c; ++ci) {
                    const double* g = self.grad.plane(s, ci);
                    double* d = da.plane(s, ci);
                    for (std::size_t i = 0; i < plane; ++i) d[i] += g[i];
                }
            }
            if (b_v->requires_grad) {
                Tensor4& db = b_v->ensure_grad();
                for (int ci = 0; ci < tb.c; ++ci) {
                    const double* g = self.grad.plane(s, ta.c + ci);
                    double* d = db.plane(s, ci);
                    for (std::size_t i = 0; i < plane; ++i) d[i] += g[i];
                }
            }
        }
    });
    return node;
}

Value softmax_channels(const Value& logits) {
    const Tensor4& in = logits->value;
    if (in.c < 2) {
        throw ConfigError("softmax_channels: need at least 2 channels, got " + in.shape_str());
    }
    Tensor4 out(in.n, in.c, in.h, in.w);
    const std::size_t plane = static_cast<std::size_t>(in.h) * in.w;
    for (int s = 0; s < in.n; ++s) {
        for (std::size_t i = 0; i < plane; ++i) {
            double mx = in.plane(s, 0)[i];
            for (int ci = 1; ci < in.c; ++ci) mx = std::max(mx, in.plane(s, ci)[i]);
            double z = 0.0;
            for (int ci = 0; ci < in.c; ++ci) {
                const double e = std::exp(in.plane(s, ci)[i] - mx);
                out.plane(s, ci)[i] = e;
                z += e;
            }
            const double inv = 1.0 / z;
            for (int ci = 0; ci < in.c; ++ci) out.plane(s, ci)[i] *= inv;
        }
    }
    auto node = make_node(std::move(out));
    finish_op(node, {logits}, [](Node& self) {
        const Value& in_v = self.inputs[0];
        if (!in_v->requires_grad) return;
        Tensor4& dx = in_v->ensure_grad();
        const Tensor4& p = self.value;
        const Tensor4& dy = self.grad;
        const std::size_t plane = static_cast<std::size_t>(p.h) * p.w;
        for (int s = 0; s < p.n; ++s) {
            for (std::size_t i = 0; i < plane; ++i) {
                double dot = 0.0;
                for (int ci = 0; ci < p.c; ++ci) {
                    dot += dy.plane(s, ci)[i] * p.plane(s, ci)[i];
                }
                for (int ci = 0; ci < p.c; ++ci) {
                    dx.plane(s, ci)[i] += p.plane(s, ci)[i] * (dy.plane(s, ci)[i] - dot);
                }
            }
        }
    });
    return node;
}

Value cross_entropy_soft(const Value& pred_prob, const Tensor4& target_prob,
                         const Tensor4& pixel_mask) {
    const Tensor4& p = pred_prob->value;
    require_same_shape(p, target_prob, "cross_entropy_soft pred/target");
    if (pixel_mask.n != p.n || pixel_mask.c != 1 || pixel_mask.h != p.h || pixel_mask.w != p.w) {
        throw ConfigError("cross_entropy_soft: mask " + pixel_mask.shape_str() +
                          " must be (n,1,h,w) matching pred " + p.shape_str());
    }
    const std::size_t plane = static_cast<std::size_t>(p.h) * p.w;
    std::int64_t masked = 0;
    for (int s = 0; s < p.n; ++s) {
        const double* m = pixel_mask.plane(s, 0);
        for (std::size_t i = 0; i < plane; ++i) {
            if (m[i] != 0.0 && m[i] != 1.0) {
                throw ValidationError("cross_entropy_soft: mask must be binary");
            }
            if (m[i] == 0.0) continue;
            ++masked;
            double sum = 0.0;
            for (int ci = 0; ci < p.c; ++ci) sum += target_prob.plane(s, ci)[i];
            if (std::abs(sum - 1.0) > 1e-6) {
                throw ValidationError(
                    "cross_entropy_soft: target channel sum off by more than 1e-6 at a masked "
                    "pixel");
            }
        }
    }
    if (masked == 0) {
        throw DegenerateInputError("cross_entropy_soft: empty pixel mask");
    }
    const double inv_m = 1.0 / static_cast<double>(masked);
    double loss = 0.0;
    for (int s = 0; s < p.n; ++s) {
        const double* m = pixel_mask.plane(s, 0);
        for (int ci = 0; ci < p.c; ++ci) {
            const double* pp = p.plane(s, ci);
            const double* tt = target_prob.plane(s, ci);
            for (std::size_t i = 0; i < plane; ++i) {
                if (m[i] == 0.0) continue;
                loss -= tt[i] * std::log(std::max(pp[i], kLogEps));
            }
        }
    }
    auto node = make_node(Tensor4::scalar(loss * inv_m));
    finish_op(node, {pred_prob}, [target_prob, pixel_mask, inv_m](Node& self) {
        const Value& p_v = self.inputs[0];
        if (!p_v->requires_grad) return;
        Tensor4& dx = p_v->ensure_grad();
        const Tensor4& p = p_v->value;
        const double g = self.grad.data[0] * inv_m;
        const std::size_t plane = static_cast<std::size_t>(p.h) * p.w;
        for (int s = 0; s < p.n; ++s) {
            const double* m = pixel_mask.plane(s, 0);
            for (int ci = 0; ci < p.c; ++ci) {
                const double* pp = p.plane(s, ci);
                const double* tt = target_prob.plane(s, ci);
                double* d = dx.plane(s, ci);
                for (std::size_t i = 0; i < plane; ++i) {
                    if (m[i] == 0.0 || pp[i] <= kLogEps) continue;
                    d[i] -= g * tt[i] / pp[i];
                }
            }
        }
    });
    return node;
}

Value slice_sample(const Value& input, int sample) {
    const Tensor4& in = input->value;
    if (sample < 0 || sample >= in.n) {
        throw ConfigError("slice_sample: index " + std::to_string(sample) + " out of range for " +
                          in.shape_str());
    }
    Tensor4 out(1, in.c, in.h, in.w);
    const std::size_t count = static_cast<std::size_t>(in.c) * in.h * in.w;
    std::copy(in.plane(sample, 0), in.plane(sample, 0) + count, out.data.begin());
    auto node = make_node(std::move(out));
    finish_op(node, {input}, [sample](Node& self) {
        const Value& in_v = self.inputs[0];
        if (!in_v->requires_grad) return;
        Tensor4& dx = in_v->ensure_grad();
        double* dst = dx.plane(sample, 0);
        for (std::size_t i = 0; i < self.grad.data.size(); ++i) dst[i] += self.grad.data[i];
    });
    return node;
}

Value add(const Value& a, const Value& b) {
    require_same_shape(a->value, b->value, "add");
    Tensor4 out = a->value;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b->value.data[i];
    auto node = make_node(std::move(out));
    finish_op(node, {a, b}, [](Node& self) {
        for (int k = 0; k < 2; ++k) {
            const Value& in_v = self.inputs[k];
            if (!in_v->requires_grad) continue;
            Tensor4& d = in_v->ensure_grad();
            for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] += self.grad.data[i];
        }
    });
    return node;
}

Value mul(const Value& a, const Value& b) {
    require_same_shape(a->value, b->value, "mul");
    Tensor4 out = a->value;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b->value.data[i];
    auto node = make_node(std::move(out));
    finish_op(node, {a, b}, [](Node& self) {
        const Value& a_v = self.inputs[0];
        const Value& b_v = self.inputs[1];
        if (a_v->requires_grad) {
            Tensor4& d = a_v->ensure_grad();
            for (std::size_t i = 0; i < d.data.size(); ++i)
                d.data[i] += self.grad.data[i] * b_v->value.data[i];
        }
        if (b_v->requires_grad) {
            Tensor4& d = b_v->ensure_grad();
            for (std::size_t i = 0; i < d.data.size(); ++i)
                d.data[i] += self.grad.data[i] * a_v->value.data[i];
        }
    });
    return node;
}

Value scale(const Value& a, double k) {
    Tensor4 out = a->value;
    for (double& v : out.data) v *= k;
    auto node = make_node(std::move(out));
    finish_op(node, {a}, [k](Node& self) {
        const Value& in_v = self.inputs[0];
        if (!in_v->requires_grad) return;
        Tensor4& d = in_v->ensure_grad();
        for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] += k * self.grad.data[i];
    });
    return node;
}

Value sum_all(const Value& a) {
    double acc = 0.0;
    for (double v : a->value.data) acc += v;
    auto node = make_node(Tensor4::scalar(acc));
    finish_op(node, {a}, [](Node& self) {
        const Value& in_v = self.inputs[0];
        if (!in_v->requires_grad) return;
        Tensor4& d = in_v->ensure_grad();
        const double g = self.grad.data[0];
        for (double& v : d.data) v += g;
    });
    return node;
}

void backward(const Value& loss) {
    if (!loss) throw UsageError("backward: null loss node");
    if (loss->value.numel() != 1) {
        throw UsageError("backward: loss must be scalar, got " + loss->value.shape_str());
    }
    if (loss->backward_consumed) {
        throw UsageError("backward: trace already consumed; run a fresh forward pass");
    }
    if (loss->inputs.empty() && !loss->bound_param) {
        throw UsageError("backward: no computation trace recorded for this node");
    }

    // Depth-first topological order over the recorded trace.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(loss.get(), 0);
    visited.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* child = node->inputs[next].get();
            ++next;
            if (child && !visited.count(child)) {
                visited.insert(child);
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    // order is children-before-parents; run backprop parents-first.
    loss->ensure_grad().data[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->has_grad && node->backprop) node->backprop(*node);
    }
    for (Node* node : order) {
        if (node->bound_param && node->has_grad) {
            Tensor4& pg = node->bound_param->grad;
            for (std::size_t i = 0; i < pg.data.size(); ++i) pg.data[i] += node->grad.data[i];
        }
    }
    loss->backward_consumed = true;
}

}  // namespace lfc
