#pragma once

// Small randomly-initialised U-Net with the SD v1.x attention topology
// (3 down blocks, 1 mid block, 3 up blocks of transformer layers). Each
// layer is residual MLP -> self-attention -> cross-attention. Spatial
// resolution halves after every down block and doubles before every up
// block, with skip connections between matching resolutions.
//
// The noise prediction is prior(z, t) + residual_scale * net(z, t, context)
// where prior is the exact noise estimate for a unit-Gaussian latent prior;
// it keeps sampling with random weights bounded.
//
// A reverse pass w.r.t. the context embedding is provided for null-text
// optimisation (hooks are not allowed on taped passes).

#include <cmath>
#include <memory>
#include <random>
#include <vector>

#include "chromalign/attn/hooks.hpp"
#include "chromalign/attn/site.hpp"
#include "chromalign/core/error.hpp"
#include "chromalign/core/tensor.hpp"

namespace chromalign {

namespace nn {

using Rng = std::mt19937_64;

struct Linear {
    Matrix w;     // in x out
    RowVector b;  // empty when bias-free

    static Linear init(int in, int out, Rng& rng, bool bias = true, float gain = 1.0f) {
        Linear l;
        std::normal_distribution<float> n(0.0f, gain / std::sqrt(static_cast<float>(in)));
        l.w.resize(in, out);
        for (Eigen::Index i = 0; i < l.w.size(); ++i) l.w.data()[i] = n(rng);
        if (bias) {
            std::normal_distribution<float> nb(0.0f, 0.05f);
            l.b.resize(out);
            for (int j = 0; j < out; ++j) l.b(j) = nb(rng);
        }
        return l;
    }

    Matrix forward(const Matrix& x) const {
        Matrix y = x * w;
        if (b.size()) y.rowwise() += b;
        return y;
    }
    Matrix backward(const Matrix& gy) const { return gy * w.transpose(); }
};

struct NormCache {
    Matrix normalized;
    Eigen::VectorXf inv_std;
};

// Row-wise layer norm without affine parameters.
inline Matrix layer_norm(const Matrix& x, NormCache* cache) {
    constexpr float eps = 1e-5f;
    Matrix y(x.rows(), x.cols());
    Eigen::VectorXf inv(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const float mu = x.row(r).mean();
        const float var = (x.row(r).array() - mu).square().mean();
        inv(r) = 1.0f / std::sqrt(var + eps);
        y.row(r) = (x.row(r).array() - mu) * inv(r);
    }
    if (cache) {
        cache->normalized = y;
        cache->inv_std = inv;
    }
    return y;
}

inline Matrix layer_norm_backward(const Matrix& g, const NormCache& c) {
    Matrix gx(g.rows(), g.cols());
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
        const float mg = g.row(r).mean();
        const float mgy = (g.row(r).array() * c.normalized.row(r).array()).mean();
        gx.row(r) = c.inv_std(r) * (g.row(r).array() - mg - c.normalized.row(r).array() * mgy);
    }
    return gx;
}

inline float sigmoid(float a) { return 1.0f / (1.0f + std::exp(-a)); }

inline Matrix silu(const Matrix& a) {
    return a.unaryExpr([](float v) { return v * sigmoid(v); });
}

inline Matrix silu_grad(const Matrix& a) {
    return a.unaryExpr([](float v) {
        const float s = sigmoid(v);
        return s * (1.0f + v * (1.0f - s));
    });
}

inline void softmax_rows(Matrix& s) {
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
        const float mx = s.row(r).maxCoeff();
        s.row(r) = (s.row(r).array() - mx).exp();
        s.row(r) /= s.row(r).sum();
    }
}

inline Matrix avg_pool2(const Matrix& x, int h, int w) {
    Matrix out((h / 2) * (w / 2), x.cols());
    for (int y = 0; y < h / 2; ++y)
        for (int xx = 0; xx < w / 2; ++xx) {
            const auto i = static_cast<Eigen::Index>(y) * (w / 2) + xx;
            out.row(i) = 0.25f * (x.row((2 * y) * w + 2 * xx) + x.row((2 * y) * w + 2 * xx + 1) +
                                  x.row((2 * y + 1) * w + 2 * xx) + x.row((2 * y + 1) * w + 2 * xx + 1));
        }
    return out;
}

inline Matrix avg_pool2_backward(const Matrix& g, int h, int w) {
    Matrix gx(static_cast<Eigen::Index>(h) * w, g.cols());
    for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) gx.row(y * w + xx) = 0.25f * g.row((y / 2) * (w / 2) + xx / 2);
    return gx;
}

// (h, w) -> (2h, 2w)
inline Matrix upsample2(const Matrix& x, int h, int w) {
    Matrix out(static_cast<Eigen::Index>(4) * h * w, x.cols());
    for (int y = 0; y < 2 * h; ++y)
        for (int xx = 0; xx < 2 * w; ++xx) out.row(y * 2 * w + xx) = x.row((y / 2) * w + xx / 2);
    return out;
}

// g at (2h, 2w) -> (h, w)
inline Matrix upsample2_backward(const Matrix& g, int h, int w) {
    Matrix gx = Matrix::Zero(static_cast<Eigen::Index>(h) * w, g.cols());
    for (int y = 0; y < 2 * h; ++y)
        for (int xx = 0; xx < 2 * w; ++xx) gx.row((y / 2) * w + xx / 2) += g.row(y * 2 * w + xx);
    return gx;
}

inline RowVector sinusoidal_embedding(int timestep, int dim) {
    RowVector e(dim);
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * i / half);
        e(i) = static_cast<float>(std::cos(timestep * freq));
        e(i + half) = static_cast<float>(std::sin(timestep * freq));
    }
    return e;
}

struct HookScope {
    HookSet* hooks = nullptr;
    int timestep = 0;
    Branch branch = Branch::conditional;
};

struct ResidualMlp {
    Linear fc1, time, fc2;

    struct Cache {
        NormCache norm;
        Matrix pre;
        Matrix act;
    };

    Matrix forward(const Matrix& x, const RowVector& temb, Cache* c) const {
        NormCache nc;
        const Matrix n = layer_norm(x, c ? &nc : nullptr);
        Matrix pre = fc1.forward(n);
        pre.rowwise() += time.forward(temb).row(0);
        Matrix act = silu(pre);
        Matrix out = x + fc2.forward(act);
        if (c) {
            c->norm = std::move(nc);
            c->pre = std::move(pre);
            c->act = std::move(act);
        }
        return out;
    }

    Matrix backward(const Matrix& g, const Cache& c) const {
        const Matrix gact = fc2.backward(g);
        const Matrix gpre = gact.cwiseProduct(silu_grad(c.pre));
        return g + layer_norm_backward(fc1.backward(gpre), c.norm);
    }
};

struct Attention {
    AttentionSite site;
    Linear q, k, v, out;

    struct Cache {
        NormCache norm;
        Matrix normed;
        Matrix source;  // K/V input: normed (self) or context (cross)
        Matrix queries, keys, values;
        std::vector<Matrix> maps;
    };

    Matrix forward(const Matrix& x, const Matrix* context, int gh, int gw, const HookScope& scope, Cache* c) const {
        NormCache nc;
        const Matrix normed = layer_norm(x, c ? &nc : nullptr);
        const Matrix& src = site.is_cross() ? *context : normed;
        const Matrix queries = q.forward(normed);
        Matrix keys = k.forward(src);
        Matrix values = v.forward(src);
        HookSet* hooks = scope.hooks && !scope.hooks->empty() ? scope.hooks : nullptr;
        const AttentionEvent ev{site, scope.timestep, scope.branch};
        if (hooks) {
            hooks->modify_keys(ev, keys);
            hooks->modify_values(ev, values);
        }
        const int heads = site.head_count;
        const int d = site.channel_dim;
        const float scale = 1.0f / std::sqrt(static_cast<float>(d));
        std::vector<Matrix> maps(static_cast<std::size_t>(heads));
        Matrix mixed(x.rows(), static_cast<Eigen::Index>(heads) * d);
        for (int h = 0; h < heads; ++h) {
            Matrix s = (queries.middleCols(h * d, d) * keys.middleCols(h * d, d).transpose()) * scale;
            softmax_rows(s);
            if (hooks) hooks->modify_map(ev, h, s);
            mixed.middleCols(h * d, d) = s * values.middleCols(h * d, d);
            maps[static_cast<std::size_t>(h)] = std::move(s);
        }
        if (hooks && hooks->wants_observation(ev)) {
            BranchTensors t;
            for (int h = 0; h < heads; ++h) {
                t.queries.push_back(queries.middleCols(h * d, d));
                t.keys.push_back(keys.middleCols(h * d, d));
                t.values.push_back(values.middleCols(h * d, d));
            }
            t.maps = maps;
            hooks->observe(ev, gh, gw, t);
        }
        Matrix y = x + out.forward(mixed);
        if (c) {
            c->norm = std::move(nc);
            c->normed = normed;
            c->source = src;
            c->queries = queries;
            c->keys = std::move(keys);
            c->values = std::move(values);
            c->maps = std::move(maps);
        }
        return y;
    }

    // Returns d/dx; accumulates d/dcontext for cross sites.
    Matrix backward(const Matrix& g, const Cache& c, Matrix* grad_context) const {
        const int heads = site.head_count;
        const int d = site.channel_dim;
        const float scale = 1.0f / std::sqrt(static_cast<float>(d));
        const Matrix gmixed = out.backward(g);
        Matrix gq(c.queries.rows(), c.queries.cols());
        Matrix gk(c.keys.rows(), c.keys.cols());
        Matrix gv(c.values.rows(), c.values.cols());
        for (int h = 0; h < heads; ++h) {
            const Matrix& a = c.maps[static_cast<std::size_t>(h)];
            const auto go = gmixed.middleCols(h * d, d);
            gv.middleCols(h * d, d) = a.transpose() * go;
            const Matrix ga = go * c.values.middleCols(h * d, d).transpose();
            const Eigen::VectorXf rs = ga.cwiseProduct(a).rowwise().sum();
            const Matrix gs = a.cwiseProduct(ga.colwise() - rs) * scale;
            gq.middleCols(h * d, d) = gs * c.keys.middleCols(h * d, d);
            gk.middleCols(h * d, d) = gs.transpose() * c.queries.middleCols(h * d, d);
        }
        Matrix gnormed = q.backward(gq);
        const Matrix gsrc = k.backward(gk) + v.backward(gv);
        if (site.is_cross()) {
            if (grad_context) *grad_context += gsrc;
        } else {
            gnormed += gsrc;
        }
        return g + layer_norm_backward(gnormed, c.norm);
    }
};

struct TransformerLayer {
    ResidualMlp mlp;
    Attention self_attn;
    Attention cross_attn;

    struct Cache {
        ResidualMlp::Cache mlp;
        Attention::Cache self_attn, cross_attn;
    };

    Matrix forward(const Matrix& x, const RowVector& temb, const Matrix& ctx, int gh, int gw, const HookScope& scope,
                   Cache* c) const {
        Matrix h = mlp.forward(x, temb, c ? &c->mlp : nullptr);
        h = self_attn.forward(h, nullptr, gh, gw, scope, c ? &c->self_attn : nullptr);
        return cross_attn.forward(h, &ctx, gh, gw, scope, c ? &c->cross_attn : nullptr);
    }

    Matrix backward(const Matrix& g, const Cache& c, Matrix* gctx) const {
        Matrix gh = cross_attn.backward(g, c.cross_attn, gctx);
        gh = self_attn.backward(gh, c.self_attn, gctx);
        return mlp.backward(gh, c.mlp);
    }
};

}  // namespace nn

class TinyUnet {
public:
    static constexpr int kTimeEmbedDim = 32;

    struct Tape {
        int height = 0, width = 0;
        std::vector<std::vector<nn::TransformerLayer::Cache>> encoder, mid, decoder;
        nn::NormCache out_norm;
        std::vector<Eigen::Index> skip_widths;
    };

    TinyUnet(ModelLayout layout, std::uint64_t seed, float residual_scale = 0.05f)
        : layout_(std::move(layout)), residual_scale_(residual_scale) {
        if (!layout_.is_three_one_three())
            throw StructuralError("layout", "tiny U-Net requires 3 encoder, 1 mid and 3 decoder blocks");
        nn::Rng rng(seed);
        const int lc = layout_.latent_channels;
        time_in_ = nn::Linear::init(kTimeEmbedDim, kTimeEmbedDim, rng);
        time_out_ = nn::Linear::init(kTimeEmbedDim, kTimeEmbedDim, rng);
        input_ = nn::Linear::init(lc, layout_.encoder[0].channels(), rng);

        auto make_layers = [&](Region r, int b, const BlockSpec& spec) {
            std::vector<nn::TransformerLayer> layers;
            const int c = spec.channels();
            for (int l = 1; l <= spec.layers; ++l) {
                nn::TransformerLayer t;
                t.mlp.fc1 = nn::Linear::init(c, 2 * c, rng);
                t.mlp.time = nn::Linear::init(kTimeEmbedDim, 2 * c, rng);
                t.mlp.fc2 = nn::Linear::init(2 * c, c, rng, true, 0.5f);
                for (AttnKind kind : {AttnKind::self_attn, AttnKind::cross_attn}) {
                    nn::Attention a;
                    a.site = {r, b, l, kind, spec.heads, spec.head_dim};
                    const int src = kind == AttnKind::cross_attn ? layout_.context_dim : c;
                    a.q = nn::Linear::init(c, c, rng, false, 2.0f);
                    a.k = nn::Linear::init(src, c, rng, false, 2.0f);
                    a.v = nn::Linear::init(src, c, rng, false);
                    a.out = nn::Linear::init(c, c, rng);
                    (kind == AttnKind::self_attn ? t.self_attn : t.cross_attn) = std::move(a);
                }
                layers.push_back(std::move(t));
            }
            return layers;
        };

        for (int b = 0; b < 3; ++b) {
            encoder_.push_back(make_layers(Region::encoder, b + 1, layout_.encoder[b]));
            const int next = b < 2 ? layout_.encoder[b + 1].channels() : layout_.mid[0].channels();
            down_.push_back(nn::Linear::init(layout_.encoder[b].channels(), next, rng));
        }
        mid_ = make_layers(Region::mid, 1, layout_.mid[0]);
        for (int b = 0; b < 3; ++b) {
            const int prev = b == 0 ? layout_.mid[0].channels() : layout_.decoder[b - 1].channels();
            const int skip = layout_.encoder[2 - b].channels();
            up_.push_back(nn::Linear::init(prev + skip, layout_.decoder[b].channels(), rng));
            decoder_.push_back(make_layers(Region::decoder, b + 1, layout_.decoder[b]));
        }
        output_ = nn::Linear::init(layout_.decoder[2].channels(), lc, rng);
    }

    const ModelLayout& layout() const noexcept { return layout_; }
    float residual_scale() const noexcept { return residual_scale_; }

    // Network residual only (without the analytic prior term).
    Latent forward(const Latent& z, int train_timestep, const Matrix& context, const nn::HookScope& scope,
                   Tape* tape) const {
        require(z.channels == layout_.latent_channels, "latent channel count does not match model");
        require(z.height % 8 == 0 && z.width % 8 == 0, "latent sides must be multiples of 8");
        require(context.rows() == layout_.context_length && context.cols() == layout_.context_dim,
                "context embedding shape does not match model");
        if (tape) require(!scope.hooks || scope.hooks->empty(), "hooks are not supported on taped passes");

        const RowVector temb =
            time_out_.forward(nn::silu(time_in_.forward(nn::sinusoidal_embedding(train_timestep, kTimeEmbedDim))));
        int h = z.height, w = z.width;
        if (tape) {
            *tape = Tape{};
            tape->height = h;
            tape->width = w;
        }
        Matrix x = input_.forward(z.tokens());
        std::vector<Matrix> skips;
        for (int b = 0; b < 3; ++b) {
            x = run_block(encoder_[b], x, temb, context, h, w, scope, tape ? &tape->encoder : nullptr);
            skips.push_back(x);
            x = down_[b].forward(nn::avg_pool2(x, h, w));
            h /= 2;
            w /= 2;
        }
        x = run_block(mid_, x, temb, context, h, w, scope, tape ? &tape->mid : nullptr);
        for (int b = 0; b < 3; ++b) {
            Matrix up = nn::upsample2(x, h, w);
            h *= 2;
            w *= 2;
            const Matrix& skip = skips[static_cast<std::size_t>(2 - b)];
            Matrix cat(up.rows(), up.cols() + skip.cols());
            cat << up, skip;
            if (tape) tape->skip_widths.push_back(up.cols());
            x = up_[b].forward(cat);
            x = run_block(decoder_[b], x, temb, context, h, w, scope, tape ? &tape->decoder : nullptr);
        }
        const Matrix eps = output_.forward(nn::layer_norm(x, tape ? &tape->out_norm : nullptr));
        return Latent::from_tokens(eps, z.height, z.width);
    }

    // d<upstream, forward(...)>/d context for the pass recorded in tape.
    Matrix context_gradient(const Tape& tape, const Latent& upstream) const {
        Matrix gctx = Matrix::Zero(layout_.context_length, layout_.context_dim);
        Matrix g = nn::layer_norm_backward(output_.backward(upstream.tokens()), tape.out_norm);
        std::vector<Matrix> gskips(3);
        for (int b = 2; b >= 0; --b) {
            g = back_block(decoder_[b], g, tape.decoder, b, gctx);
            const Matrix gcat = up_[b].backward(g);
            const Eigen::Index upw = tape.skip_widths[static_cast<std::size_t>(b)];
            gskips[static_cast<std::size_t>(2 - b)] = gcat.rightCols(gcat.cols() - upw);
            g = nn::upsample2_backward(gcat.leftCols(upw), tape.height >> (3 - b), tape.width >> (3 - b));
        }
        g = back_block(mid_, g, tape.mid, 0, gctx);
        for (int b = 2; b >= 0; --b) {
            const int bh = tape.height >> b, bw = tape.width >> b;
            g = nn::avg_pool2_backward(down_[b].backward(g), bh, bw);
            g += gskips[static_cast<std::size_t>(b)];
            g = back_block(encoder_[b], g, tape.encoder, b, gctx);
        }
        return gctx;
    }

private:
    Matrix run_block(const std::vector<nn::TransformerLayer>& layers, Matrix x, const RowVector& temb,
                     const Matrix& ctx, int h, int w, const nn::HookScope& scope,
                     std::vector<std::vector<nn::TransformerLayer::Cache>>* caches) const {
        std::vector<nn::TransformerLayer::Cache> block_cache(caches ? layers.size() : 0);
        for (std::size_t l = 0; l < layers.size(); ++l)
            x = layers[l].forward(x, temb, ctx, h, w, scope, caches ? &block_cache[l] : nullptr);
        if (caches) caches->push_back(std::move(block_cache));
        return x;
    }

    Matrix back_block(const std::vector<nn::TransformerLayer>& layers, Matrix g,
                      const std::vector<std::vector<nn::TransformerLayer::Cache>>& caches, int b, Matrix& gctx) const {
        const auto& bc = caches[static_cast<std::size_t>(b)];
        for (std::size_t l = layers.size(); l-- > 0;) g = layers[l].backward(g, bc[l], &gctx);
        return g;
    }

    ModelLayout layout_;
    float residual_scale_;
    nn::Linear time_in_, time_out_, input_, output_;
    std::vector<std::vector<nn::TransformerLayer>> encoder_, decoder_;
    std::vector<nn::TransformerLayer> mid_;
    std::vector<nn::Linear> down_, up_;
};

}  // namespace chromalign
