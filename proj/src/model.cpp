#include "isct/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

#include "isct/error.hpp"
#include "isct/rng.hpp"

namespace isct {

std::string to_string(Nonlinearity n) { return n == Nonlinearity::gelu ? "gelu" : "relu"; }

Nonlinearity parse_nonlinearity(std::string_view s) {
    if (s == "gelu") return Nonlinearity::gelu;
    if (s == "relu") return Nonlinearity::relu;
    throw ConfigError("unknown nonlinearity '" + std::string(s) + "' (expected gelu or relu)");
}

std::string to_string(Precision p) { return p == Precision::high ? "high" : "standard"; }

Precision parse_precision(std::string_view s) {
    if (s == "high") return Precision::high;
    if (s == "standard") return Precision::standard;
    throw ConfigError("unknown precision '" + std::string(s) + "' (expected high or standard)");
}

void ModelConfig::validate() const {
    if (embed_dim < 1 || num_layers < 1 || num_heads < 1) {
        throw ConfigError("model: embed_dim, num_layers and num_heads must be positive");
    }
    if (embed_dim % num_heads != 0) {
        throw ConfigError("model: embed_dim " + std::to_string(embed_dim) + " is not divisible by num_heads " +
                          std::to_string(num_heads));
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model: dropout must lie in [0, 1)");
    if (state_dim < 1 || action_dim < 1) throw ConfigError("model: state_dim and action_dim must be positive");
    if (layout.slots.empty() || layout.context_T < 1 || layout.num_channels < 1) {
        throw ConfigError("model: layout table is empty");
    }
    if (sequence_limit() < 1) throw ConfigError("model: max sequence length must be positive");
    for (const auto& s : layout.slots) {
        if (s.width < 1) throw ConfigError("model: layout slot " + slot_name(s) + " has non-positive width");
        if (s.channel < 0 || s.channel >= layout.num_channels) {
            throw ConfigError("model: layout slot " + slot_name(s) + " has a channel outside the embedding table");
        }
    }
}

const ParamTensor& ModelParams::get(std::string_view name) const { return tensors[index_of(name)]; }

ParamTensor& ModelParams::get(std::string_view name) { return tensors[index_of(name)]; }

bool ModelParams::contains(std::string_view name) const {
    return std::any_of(tensors.begin(), tensors.end(), [&](const ParamTensor& t) { return t.name == name; });
}

std::size_t ModelParams::index_of(std::string_view name) const {
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        if (tensors[i].name == name) return i;
    }
    throw ConfigError("model parameters have no tensor named '" + std::string(name) + "'");
}

std::size_t ModelParams::trainable_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) {
        if (t.trainable) n += t.values.size();
    }
    return n;
}

bool ModelParams::all_finite() const {
    for (const auto& t : tensors) {
        for (double v : t.values) {
            if (!std::isfinite(v)) return false;
        }
    }
    return true;
}

ModelParams ModelParams::zeros_like() const {
    ModelParams out = *this;
    for (auto& t : out.tensors) std::fill(t.values.begin(), t.values.end(), 0.0);
    return out;
}

std::string slot_name(const SlotSpec& slot) { return to_string(slot.kind) + "." + std::to_string(slot.channel); }

namespace {

enum class Init { zero, one, normal, residual, fan_in };

struct TensorSpec {
    std::string name;
    int rows;
    int cols;
    Init init;
    bool decay;
    bool trainable;
};

std::vector<TensorSpec> tensor_specs(const ModelConfig& cfg) {
    std::vector<TensorSpec> out;
    const int E = cfg.embed_dim;
    auto add = [&](std::string name, int rows, int cols, Init init, bool decay, bool trainable = true) {
        out.push_back({std::move(name), rows, cols, init, decay, trainable});
    };
    for (const auto& s : cfg.layout.slots) {
        add("proj." + slot_name(s) + ".w", E, s.width, Init::fan_in, true);
        add("proj." + slot_name(s) + ".b", 1, E, Init::zero, false);
    }
    for (const auto& s : cfg.layout.slots) {
        add("norm." + slot_name(s) + ".shift", 1, s.width, Init::zero, false, false);
        add("norm." + slot_name(s) + ".scale", 1, s.width, Init::one, false, false);
    }
    add("emb.type", kNumTokenKinds, E, Init::normal, false);
    add("emb.channel", cfg.layout.num_channels, E, Init::normal, false);
    add("emb.pos", cfg.layout.context_T, E, Init::normal, false);
    for (int l = 0; l < cfg.num_layers; ++l) {
        const std::string h = "h" + std::to_string(l) + ".";
        add(h + "ln1.g", 1, E, Init::one, false);
        add(h + "ln1.b", 1, E, Init::zero, false);
        add(h + "attn.qkv.w", 3 * E, E, Init::normal, true);
        add(h + "attn.qkv.b", 1, 3 * E, Init::zero, false);
        add(h + "attn.proj.w", E, E, Init::residual, true);
        add(h + "attn.proj.b", 1, E, Init::zero, false);
        add(h + "ln2.g", 1, E, Init::one, false);
        add(h + "ln2.b", 1, E, Init::zero, false);
        add(h + "mlp.fc.w", 4 * E, E, Init::normal, true);
        add(h + "mlp.fc.b", 1, 4 * E, Init::zero, false);
        add(h + "mlp.proj.w", E, 4 * E, Init::residual, true);
        add(h + "mlp.proj.b", 1, E, Init::zero, false);
    }
    add("lnf.g", 1, E, Init::one, false);
    add("lnf.b", 1, E, Init::zero, false);
    add("head.action.w", cfg.action_dim, E, Init::zero, true);
    add("head.action.b", 1, cfg.action_dim, Init::zero, false);
    add("head.obs.w", cfg.state_dim, E, Init::zero, true);
    add("head.obs.b", 1, cfg.state_dim, Init::zero, false);
    return out;
}

}  // namespace

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    const double resid_sd = 0.02 / std::sqrt(2.0 * cfg.num_layers);
    ModelParams p;
    for (const auto& spec : tensor_specs(cfg)) {
        ParamTensor t;
        t.name = spec.name;
        t.rows = spec.rows;
        t.cols = spec.cols;
        t.trainable = spec.trainable;
        t.decay = spec.decay;
        t.values.assign(static_cast<std::size_t>(spec.rows) * static_cast<std::size_t>(spec.cols), 0.0);
        const double bound = 1.0 / std::sqrt(static_cast<double>(spec.cols));
        for (auto& v : t.values) {
            switch (spec.init) {
                case Init::zero: break;
                case Init::one: v = 1.0; break;
                case Init::normal: v = rng.normal(0.0, 0.02); break;
                case Init::residual: v = rng.normal(0.0, resid_sd); break;
                case Init::fan_in: v = rng.uniform(-bound, bound); break;
            }
        }
        p.tensors.push_back(std::move(t));
    }
    return p;
}

std::vector<double> act_targets(const TokenSequence& seq) {
    std::vector<double> out;
    for (const auto& tok : seq.tokens) {
        if (tok.kind == TokenKind::act) out.insert(out.end(), tok.payload.begin(), tok.payload.end());
    }
    return out;
}

namespace {

struct LayerIndex {
    std::size_t ln1_g, ln1_b, qkv_w, qkv_b, attn_w, attn_b, ln2_g, ln2_b, fc_w, fc_b, mp_w, mp_b;
};

struct ParamIndex {
    std::vector<std::size_t> proj_w, proj_b, shift, scale;
    std::size_t emb_type, emb_chan, emb_pos;
    std::vector<LayerIndex> layers;
    std::size_t lnf_g, lnf_b, head_w, head_b;

    ParamIndex(const ModelParams& p, const ModelConfig& cfg) {
        for (const auto& s : cfg.layout.slots) {
            const std::string base = slot_name(s);
            proj_w.push_back(p.index_of("proj." + base + ".w"));
            proj_b.push_back(p.index_of("proj." + base + ".b"));
            shift.push_back(p.index_of("norm." + base + ".shift"));
            scale.push_back(p.index_of("norm." + base + ".scale"));
        }
        emb_type = p.index_of("emb.type");
        emb_chan = p.index_of("emb.channel");
        emb_pos = p.index_of("emb.pos");
        for (int l = 0; l < cfg.num_layers; ++l) {
            const std::string h = "h" + std::to_string(l) + ".";
            layers.push_back({p.index_of(h + "ln1.g"), p.index_of(h + "ln1.b"), p.index_of(h + "attn.qkv.w"),
                              p.index_of(h + "attn.qkv.b"), p.index_of(h + "attn.proj.w"),
                              p.index_of(h + "attn.proj.b"), p.index_of(h + "ln2.g"), p.index_of(h + "ln2.b"),
                              p.index_of(h + "mlp.fc.w"), p.index_of(h + "mlp.fc.b"), p.index_of(h + "mlp.proj.w"),
                              p.index_of(h + "mlp.proj.b")});
        }
        lnf_g = p.index_of("lnf.g");
        lnf_b = p.index_of("lnf.b");
        head_w = p.index_of("head.action.w");
        head_b = p.index_of("head.action.b");
    }
};

void check_shapes(const ModelParams& p, const ModelConfig& cfg) {
    const auto specs = tensor_specs(cfg);
    if (specs.size() != p.tensors.size()) {
        throw ConfigError("model parameters hold " + std::to_string(p.tensors.size()) + " tensors, config implies " +
                          std::to_string(specs.size()));
    }
    for (std::size_t i = 0; i < p.tensors.size(); ++i) {
        const auto& a = p.tensors[i];
        const auto& b = specs[i];
        if (a.name != b.name || a.rows != b.rows || a.cols != b.cols ||
            a.values.size() != static_cast<std::size_t>(a.rows) * static_cast<std::size_t>(a.cols)) {
            throw ConfigError("model parameter '" + a.name + "' does not match the config (expected '" + b.name +
                              "' " + std::to_string(b.rows) + "x" + std::to_string(b.cols) + ")");
        }
    }
}

template <class Real>
using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>;
template <class Real>
using Col = Eigen::Matrix<Real, Eigen::Dynamic, 1>;

template <class Real>
struct LayerCache {
    Mat<Real> a, xhat1;
    Col<Real> rstd1;
    Mat<Real> qkv;
    std::vector<Mat<Real>> probs;
    std::vector<Mat<Real>> attn_masks;
    Mat<Real> y;
    Mat<Real> resid1_mask;
    Mat<Real> b, xhat2;
    Col<Real> rstd2;
    Mat<Real> f, g;
    Mat<Real> resid2_mask;
};

template <class Real>
struct GroupCache {
    int B = 0;
    int L = 0;
    std::vector<std::vector<int>> slot_rows;  // rows of the stacked input per slot
    std::vector<Mat<Real>> slot_inputs;       // normalized payloads per slot
    std::vector<int> type_ids, channel_ids, position_ids;
    Mat<Real> emb_mask;
    std::vector<LayerCache<Real>> layers;
    Mat<Real> xhatf;
    Col<Real> rstdf;
    Mat<Real> z;
    std::vector<int> pred_rows;
    Mat<Real> pred;
};

template <class Real>
Mat<Real> dropout_mask(Rng& rng, Eigen::Index rows, Eigen::Index cols, double p) {
    Mat<Real> m(rows, cols);
    const Real keep = static_cast<Real>(1.0 / (1.0 - p));
    for (Eigen::Index j = 0; j < cols; ++j) {
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.uniform() < p ? Real(0) : keep;
    }
    return m;
}

template <class Real>
void layer_norm(const Mat<Real>& x, const Mat<Real>& g, const Mat<Real>& b, Mat<Real>& y, Mat<Real>& xhat,
                Col<Real>& rstd) {
    constexpr Real eps = Real(1e-5);
    const Col<Real> mean = x.rowwise().mean();
    const Mat<Real> xc = x.colwise() - mean;
    const Col<Real> var = xc.array().square().rowwise().mean();
    rstd = (var.array() + eps).rsqrt();
    xhat = xc.array().colwise() * rstd.array();
    y = (xhat.array().rowwise() * g.row(0).array()).rowwise() + b.row(0).array();
}

template <class Real>
Mat<Real> layer_norm_backward(const Mat<Real>& dy, const Mat<Real>& xhat, const Col<Real>& rstd, const Mat<Real>& g,
                              Mat<Real>& dg, Mat<Real>& db) {
    dg.row(0) += (dy.array() * xhat.array()).colwise().sum().matrix();
    db.row(0) += dy.colwise().sum();
    const Mat<Real> dxhat = dy.array().rowwise() * g.row(0).array();
    const Col<Real> m1 = dxhat.rowwise().mean();
    const Col<Real> m2 = (dxhat.array() * xhat.array()).rowwise().mean();
    Mat<Real> dx = (dxhat.colwise() - m1).array() - xhat.array().colwise() * m2.array();
    return dx.array().colwise() * rstd.array();
}

template <class Real>
Real activation(Real x, Nonlinearity n) {
    if (n == Nonlinearity::relu) return x > 0 ? x : Real(0);
    return Real(0.5) * x * (Real(1) + std::erf(x * static_cast<Real>(1.0 / std::numbers::sqrt2)));
}

template <class Real>
Real activation_grad(Real x, Nonlinearity n) {
    if (n == Nonlinearity::relu) return x > 0 ? Real(1) : Real(0);
    const Real cdf = Real(0.5) * (Real(1) + std::erf(x * static_cast<Real>(1.0 / std::numbers::sqrt2)));
    const Real pdf = std::exp(Real(-0.5) * x * x) * Real(0.3989422804014327);
    return cdf + x * pdf;
}

template <class Real>
class Engine {
public:
    Engine(const ModelParams& params, const ModelConfig& cfg) : cfg_(cfg), idx_(params, cfg) {
        P_.reserve(params.tensors.size());
        for (const auto& t : params.tensors) {
            Mat<Real> m(t.rows, t.cols);
            for (int r = 0; r < t.rows; ++r) {
                for (int c = 0; c < t.cols; ++c) m(r, c) = static_cast<Real>(t.at(r, c));
            }
            P_.push_back(std::move(m));
        }
    }

    // Runs one group of sequences sharing a layout. Predictions are
    // stored in cache.pred with rows ordered (sequence, step).
    void forward(std::span<const TokenSequence* const> seqs, bool train, Rng* rng, GroupCache<Real>& c) const {
        const int E = cfg_.embed_dim;
        const int H = cfg_.num_heads;
        const int hd = E / H;
        const auto& layout = cfg_.layout;
        c.B = static_cast<int>(seqs.size());
        c.L = static_cast<int>(seqs.front()->size());
        const int B = c.B;
        const int L = c.L;
        const Eigen::Index N = static_cast<Eigen::Index>(B) * L;
        const double p = train ? cfg_.dropout : 0.0;

        // Token embedding.
        const std::size_t S = layout.slots.size();
        c.slot_rows.assign(S, {});
        c.slot_inputs.assign(S, {});
        std::vector<int> slot_of(static_cast<std::size_t>(L));
        const auto& first = *seqs.front();
        for (int pos = 0; pos < L; ++pos) {
            const auto& tok = first.tokens[static_cast<std::size_t>(pos)];
            slot_of[static_cast<std::size_t>(pos)] = layout.slot_index(tok.kind, tok.channel_id);
        }
        c.type_ids.resize(static_cast<std::size_t>(N));
        c.channel_ids.resize(static_cast<std::size_t>(N));
        c.position_ids.resize(static_cast<std::size_t>(N));
        for (int b = 0; b < B; ++b) {
            for (int pos = 0; pos < L; ++pos) {
                const int row = b * L + pos;
                const auto& tok = seqs[static_cast<std::size_t>(b)]->tokens[static_cast<std::size_t>(pos)];
                c.slot_rows[static_cast<std::size_t>(slot_of[static_cast<std::size_t>(pos)])].push_back(row);
                c.type_ids[static_cast<std::size_t>(row)] = tok.type_id;
                c.channel_ids[static_cast<std::size_t>(row)] = tok.channel_id;
                c.position_ids[static_cast<std::size_t>(row)] = tok.position_id;
            }
        }
        Mat<Real> h(N, E);
        for (std::size_t s = 0; s < S; ++s) {
            const auto& rows = c.slot_rows[s];
            if (rows.empty()) continue;
            const int w = layout.slots[s].width;
            Mat<Real>& u = c.slot_inputs[s];
            u.resize(static_cast<Eigen::Index>(rows.size()), w);
            const auto& shift = P_[idx_.shift[s]];
            const auto& scale = P_[idx_.scale[s]];
            for (std::size_t i = 0; i < rows.size(); ++i) {
                const int b = rows[i] / L;
                const int pos = rows[i] % L;
                const auto& payload =
                    seqs[static_cast<std::size_t>(b)]->tokens[static_cast<std::size_t>(pos)].payload;
                for (int j = 0; j < w; ++j) {
                    u(static_cast<Eigen::Index>(i), j) =
                        (static_cast<Real>(payload[static_cast<std::size_t>(j)]) - shift(0, j)) / scale(0, j);
                }
            }
            const Mat<Real> proj =
                (u * P_[idx_.proj_w[s]].transpose()).rowwise() + P_[idx_.proj_b[s]].row(0);
            for (std::size_t i = 0; i < rows.size(); ++i) h.row(rows[i]) = proj.row(static_cast<Eigen::Index>(i));
        }
        for (Eigen::Index n = 0; n < N; ++n) {
            h.row(n) += P_[idx_.emb_type].row(c.type_ids[static_cast<std::size_t>(n)]) +
                        P_[idx_.emb_chan].row(c.channel_ids[static_cast<std::size_t>(n)]) +
                        P_[idx_.emb_pos].row(c.position_ids[static_cast<std::size_t>(n)]);
        }
        if (p > 0) {
            c.emb_mask = dropout_mask<Real>(*rng, N, E, p);
            h.array() *= c.emb_mask.array();
        }

        const Real scale = Real(1) / std::sqrt(static_cast<Real>(hd));
        c.layers.assign(static_cast<std::size_t>(cfg_.num_layers), {});
        for (int l = 0; l < cfg_.num_layers; ++l) {
            const auto& li = idx_.layers[static_cast<std::size_t>(l)];
            auto& lc = c.layers[static_cast<std::size_t>(l)];
            layer_norm<Real>(h, P_[li.ln1_g], P_[li.ln1_b], lc.a, lc.xhat1, lc.rstd1);
            lc.qkv = (lc.a * P_[li.qkv_w].transpose()).rowwise() + P_[li.qkv_b].row(0);
            lc.y.setZero(N, E);
            lc.probs.assign(static_cast<std::size_t>(B * H), {});
            if (p > 0) lc.attn_masks.assign(static_cast<std::size_t>(B * H), {});
            for (int b = 0; b < B; ++b) {
                for (int hh = 0; hh < H; ++hh) {
                    const auto q = lc.qkv.block(b * L, hh * hd, L, hd);
                    const auto k = lc.qkv.block(b * L, E + hh * hd, L, hd);
                    const auto v = lc.qkv.block(b * L, 2 * E + hh * hd, L, hd);
                    Mat<Real> sc = (q * k.transpose()) * scale;
                    Mat<Real>& pr = lc.probs[static_cast<std::size_t>(b * H + hh)];
                    pr.setZero(L, L);
                    for (int i = 0; i < L; ++i) {
                        Real mx = sc(i, 0);
                        for (int j = 1; j <= i; ++j) mx = std::max(mx, sc(i, j));
                        Real sum = 0;
                        for (int j = 0; j <= i; ++j) {
                            pr(i, j) = std::exp(sc(i, j) - mx);
                            sum += pr(i, j);
                        }
                        for (int j = 0; j <= i; ++j) pr(i, j) /= sum;
                    }
                    if (p > 0) {
                        Mat<Real>& m = lc.attn_masks[static_cast<std::size_t>(b * H + hh)];
                        m = dropout_mask<Real>(*rng, L, L, p);
                        const Mat<Real> pd = pr.cwiseProduct(m);
                        lc.y.block(b * L, hh * hd, L, hd) = pd.template triangularView<Eigen::Lower>() * v;
                    } else {
                        lc.y.block(b * L, hh * hd, L, hd) = pr.template triangularView<Eigen::Lower>() * v;
                    }
                }
            }
            Mat<Real> o = (lc.y * P_[li.attn_w].transpose()).rowwise() + P_[li.attn_b].row(0);
            if (p > 0) {
                lc.resid1_mask = dropout_mask<Real>(*rng, N, E, p);
                o.array() *= lc.resid1_mask.array();
            }
            h += o;
            layer_norm<Real>(h, P_[li.ln2_g], P_[li.ln2_b], lc.b, lc.xhat2, lc.rstd2);
            lc.f = (lc.b * P_[li.fc_w].transpose()).rowwise() + P_[li.fc_b].row(0);
            lc.g = lc.f.unaryExpr([n = cfg_.nonlinearity](Real x) { return activation<Real>(x, n); });
            Mat<Real> m = (lc.g * P_[li.mp_w].transpose()).rowwise() + P_[li.mp_b].row(0);
            if (p > 0) {
                lc.resid2_mask = dropout_mask<Real>(*rng, N, E, p);
                m.array() *= lc.resid2_mask.array();
            }
            h += m;
        }
        layer_norm<Real>(h, P_[idx_.lnf_g], P_[idx_.lnf_b], c.z, c.xhatf, c.rstdf);

        c.pred_rows.clear();
        for (int b = 0; b < B; ++b) {
            for (int pp : seqs[static_cast<std::size_t>(b)]->prediction_positions) c.pred_rows.push_back(b * L + pp);
        }
        Mat<Real> zp(static_cast<Eigen::Index>(c.pred_rows.size()), E);
        for (std::size_t i = 0; i < c.pred_rows.size(); ++i) zp.row(static_cast<Eigen::Index>(i)) = c.z.row(c.pred_rows[i]);
        c.pred = (zp * P_[idx_.head_w].transpose()).rowwise() + P_[idx_.head_b].row(0);
    }

    // Accumulates gradients of sum(dpred .* pred) into G.
    void backward(const GroupCache<Real>& c, const Mat<Real>& dpred, std::vector<Mat<Real>>& G) const {
        const int E = cfg_.embed_dim;
        const int H = cfg_.num_heads;
        const int hd = E / H;
        const int B = c.B;
        const int L = c.L;
        const Eigen::Index N = static_cast<Eigen::Index>(B) * L;
        const Real scale = Real(1) / std::sqrt(static_cast<Real>(hd));

        Mat<Real> zp(static_cast<Eigen::Index>(c.pred_rows.size()), E);
        for (std::size_t i = 0; i < c.pred_rows.size(); ++i) zp.row(static_cast<Eigen::Index>(i)) = c.z.row(c.pred_rows[i]);
        G[idx_.head_w] += dpred.transpose() * zp;
        G[idx_.head_b].row(0) += dpred.colwise().sum();
        const Mat<Real> dzp = dpred * P_[idx_.head_w];
        Mat<Real> dz = Mat<Real>::Zero(N, E);
        for (std::size_t i = 0; i < c.pred_rows.size(); ++i) dz.row(c.pred_rows[i]) += dzp.row(static_cast<Eigen::Index>(i));

        Mat<Real> dh = layer_norm_backward<Real>(dz, c.xhatf, c.rstdf, P_[idx_.lnf_g], G[idx_.lnf_g], G[idx_.lnf_b]);

        for (int l = cfg_.num_layers - 1; l >= 0; --l) {
            const auto& li = idx_.layers[static_cast<std::size_t>(l)];
            const auto& lc = c.layers[static_cast<std::size_t>(l)];

            // MLP branch.
            Mat<Real> dm = dh;
            if (lc.resid2_mask.size() > 0) dm.array() *= lc.resid2_mask.array();
            G[li.mp_w] += dm.transpose() * lc.g;
            G[li.mp_b].row(0) += dm.colwise().sum();
            Mat<Real> df = dm * P_[li.mp_w];
            df.array() *= lc.f.unaryExpr([n = cfg_.nonlinearity](Real x) { return activation_grad<Real>(x, n); }).array();
            G[li.fc_w] += df.transpose() * lc.b;
            G[li.fc_b].row(0) += df.colwise().sum();
            const Mat<Real> db = df * P_[li.fc_w];
            dh += layer_norm_backward<Real>(db, lc.xhat2, lc.rstd2, P_[li.ln2_g], G[li.ln2_g], G[li.ln2_b]);

            // Attention branch.
            Mat<Real> dout = dh;
            if (lc.resid1_mask.size() > 0) dout.array() *= lc.resid1_mask.array();
            G[li.attn_w] += dout.transpose() * lc.y;
            G[li.attn_b].row(0) += dout.colwise().sum();
            const Mat<Real> dy = dout * P_[li.attn_w];
            Mat<Real> dqkv = Mat<Real>::Zero(N, 3 * E);
            for (int b = 0; b < B; ++b) {
                for (int hh = 0; hh < H; ++hh) {
                    const auto q = lc.qkv.block(b * L, hh * hd, L, hd);
                    const auto k = lc.qkv.block(b * L, E + hh * hd, L, hd);
                    const auto v = lc.qkv.block(b * L, 2 * E + hh * hd, L, hd);
                    const auto dyb = dy.block(b * L, hh * hd, L, hd);
                    const Mat<Real>& pr = lc.probs[static_cast<std::size_t>(b * H + hh)];
                    Mat<Real> dp = dyb * v.transpose();
                    if (!lc.attn_masks.empty()) {
                        const Mat<Real>& m = lc.attn_masks[static_cast<std::size_t>(b * H + hh)];
                        const Mat<Real> pd = pr.cwiseProduct(m);
                        dqkv.block(b * L, 2 * E + hh * hd, L, hd) =
                            pd.template triangularView<Eigen::Lower>().transpose() * dyb;
                        dp.array() *= m.array();
                    } else {
                        dqkv.block(b * L, 2 * E + hh * hd, L, hd) =
                            pr.template triangularView<Eigen::Lower>().transpose() * dyb;
                    }
                    Mat<Real> ds = Mat<Real>::Zero(L, L);
                    for (int i = 0; i < L; ++i) {
                        Real dot = 0;
                        for (int j = 0; j <= i; ++j) dot += pr(i, j) * dp(i, j);
                        for (int j = 0; j <= i; ++j) ds(i, j) = pr(i, j) * (dp(i, j) - dot) * scale;
                    }
                    dqkv.block(b * L, hh * hd, L, hd) = ds.template triangularView<Eigen::Lower>() * k;
                    dqkv.block(b * L, E + hh * hd, L, hd) =
                        ds.template triangularView<Eigen::Lower>().transpose() * q;
                }
            }
            G[li.qkv_w] += dqkv.transpose() * lc.a;
            G[li.qkv_b].row(0) += dqkv.colwise().sum();
            const Mat<Real> da = dqkv * P_[li.qkv_w];
            dh += layer_norm_backward<Real>(da, lc.xhat1, lc.rstd1, P_[li.ln1_g], G[li.ln1_g], G[li.ln1_b]);
        }

        if (c.emb_mask.size() > 0) dh.array() *= c.emb_mask.array();
        for (Eigen::Index n = 0; n < N; ++n) {
            G[idx_.emb_type].row(c.type_ids[static_cast<std::size_t>(n)]) += dh.row(n);
            G[idx_.emb_chan].row(c.channel_ids[static_cast<std::size_t>(n)]) += dh.row(n);
            G[idx_.emb_pos].row(c.position_ids[static_cast<std::size_t>(n)]) += dh.row(n);
        }
        for (std::size_t s = 0; s < c.slot_rows.size(); ++s) {
            const auto& rows = c.slot_rows[s];
            if (rows.empty()) continue;
            Mat<Real> dproj(static_cast<Eigen::Index>(rows.size()), E);
            for (std::size_t i = 0; i < rows.size(); ++i) dproj.row(static_cast<Eigen::Index>(i)) = dh.row(rows[i]);
            G[idx_.proj_w[s]] += dproj.transpose() * c.slot_inputs[s];
            G[idx_.proj_b[s]].row(0) += dproj.colwise().sum();
        }
    }

    std::vector<Mat<Real>> zero_grads() const {
        std::vector<Mat<Real>> g;
        g.reserve(P_.size());
        for (const auto& m : P_) g.push_back(Mat<Real>::Zero(m.rows(), m.cols()));
        return g;
    }

private:
    const ModelConfig& cfg_;
    ParamIndex idx_;
    std::vector<Mat<Real>> P_;
};

void check_sequence(const TokenSequence& seq, const ModelConfig& cfg) {
    const auto& layout = cfg.layout;
    if (seq.tokens.empty()) throw ShapeError("forward: empty token sequence");
    if (static_cast<int>(seq.tokens.size()) > cfg.sequence_limit()) {
        throw ShapeError("forward: sequence of " + std::to_string(seq.tokens.size()) +
                         " tokens exceeds the model limit " + std::to_string(cfg.sequence_limit()));
    }
    for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
        const auto& t = seq.tokens[i];
        const int s = layout.slot_index(t.kind, t.channel_id);
        if (s < 0) {
            throw ShapeError("forward: token " + std::to_string(i) + " (" + to_string(t.kind) + "/" +
                             std::to_string(t.channel_id) + ") has no slot in the model layout");
        }
        const int w = layout.slots[static_cast<std::size_t>(s)].width;
        if (static_cast<int>(t.payload.size()) != w) {
            throw ShapeError("forward: token " + std::to_string(i) + " (" + to_string(t.kind) + ") has width " +
                             std::to_string(t.payload.size()) + ", layout expects " + std::to_string(w));
        }
        if (t.type_id != static_cast<int>(t.kind) || t.position_id < 0 || t.position_id >= layout.context_T) {
            throw ShapeError("forward: token " + std::to_string(i) + " has an invalid type or position id");
        }
    }
    for (int pp : seq.prediction_positions) {
        if (pp < 0 || pp >= static_cast<int>(seq.tokens.size())) {
            throw ShapeError("forward: prediction position " + std::to_string(pp) + " outside the sequence");
        }
    }
}

// Groups sequences whose token structure is identical so they can be
// stacked into one batch.
std::vector<std::vector<std::size_t>> group_by_layout(std::span<const TokenSequence> seqs) {
    std::map<std::vector<int>, std::size_t> key_to_group;
    std::vector<std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < seqs.size(); ++i) {
        std::vector<int> key;
        key.reserve(seqs[i].tokens.size() * 2 + seqs[i].prediction_positions.size() + 1);
        for (const auto& t : seqs[i].tokens) {
            key.push_back(static_cast<int>(t.kind));
            key.push_back(t.channel_id);
        }
        key.push_back(-1);
        key.insert(key.end(), seqs[i].prediction_positions.begin(), seqs[i].prediction_positions.end());
        auto [it, inserted] = key_to_group.emplace(std::move(key), groups.size());
        if (inserted) groups.emplace_back();
        groups[it->second].push_back(i);
    }
    return groups;
}

template <class Real>
ForwardOutput forward_impl(const ModelParams& params, const ModelConfig& cfg, std::span<const TokenSequence> seqs,
                           const ForwardOptions& opts) {
    cfg.validate();
    check_shapes(params, cfg);
    for (const auto& s : seqs) check_sequence(s, cfg);
    Engine<Real> engine(params, cfg);
    Rng rng(opts.dropout_seed);
    ForwardOutput out;
    out.latent.resize(seqs.size());
    out.actions.resize(seqs.size());
    for (const auto& group : group_by_layout(seqs)) {
        std::vector<const TokenSequence*> ptrs;
        for (auto i : group) ptrs.push_back(&seqs[i]);
        GroupCache<Real> c;
        engine.forward(ptrs, opts.train, &rng, c);
        const int steps = static_cast<int>(ptrs.front()->prediction_positions.size());
        for (std::size_t gi = 0; gi < group.size(); ++gi) {
            const auto b = static_cast<Eigen::Index>(gi);
            out.latent[group[gi]] = c.z.block(b * c.L, 0, c.L, cfg.embed_dim).template cast<double>();
            out.actions[group[gi]] = c.pred.block(b * steps, 0, steps, cfg.action_dim).template cast<double>();
        }
    }
    return out;
}

template <class Real>
GradOutput grad_impl(const ModelParams& params, const ModelConfig& cfg, const Batch& batch, const ForwardOptions& opts,
                     bool need_grad) {
    cfg.validate();
    check_shapes(params, cfg);
    if (batch.targets.size() != batch.sequences.size()) throw ShapeError("batch: one target vector per sequence required");
    std::size_t count = 0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        check_sequence(batch.sequences[i], cfg);
        const std::size_t expect = batch.sequences[i].prediction_positions.size() * static_cast<std::size_t>(cfg.action_dim);
        if (batch.targets[i].size() != expect) {
            throw ShapeError("batch: sequence " + std::to_string(i) + " has " + std::to_string(batch.targets[i].size()) +
                             " target values, expected " + std::to_string(expect));
        }
        count += expect;
    }
    GradOutput out;
    if (count == 0) {
        if (need_grad) out.grad = params.zeros_like();
        return out;
    }
    Engine<Real> engine(params, cfg);
    auto G = engine.zero_grads();
    Rng rng(opts.dropout_seed);
    double total = 0.0;
    const Real inv = static_cast<Real>(1.0 / static_cast<double>(count));
    for (const auto& group : group_by_layout(batch.sequences)) {
        std::vector<const TokenSequence*> ptrs;
        for (auto i : group) ptrs.push_back(&batch.sequences[i]);
        GroupCache<Real> c;
        engine.forward(ptrs, opts.train, &rng, c);
        const int steps = static_cast<int>(ptrs.front()->prediction_positions.size());
        Mat<Real> dpred(c.pred.rows(), c.pred.cols());
        for (std::size_t gi = 0; gi < group.size(); ++gi) {
            const auto& tgt = batch.targets[group[gi]];
            for (int t = 0; t < steps; ++t) {
                for (int a = 0; a < cfg.action_dim; ++a) {
                    const auto row = static_cast<Eigen::Index>(gi) * steps + t;
                    const Real diff = c.pred(row, a) - static_cast<Real>(tgt[static_cast<std::size_t>(t * cfg.action_dim + a)]);
                    total += static_cast<double>(diff) * static_cast<double>(diff);
                    dpred(row, a) = Real(2) * diff * inv;
                }
            }
        }
        if (need_grad) engine.backward(c, dpred, G);
    }
    out.loss = total / static_cast<double>(count);
    if (!std::isfinite(out.loss)) {
        throw NumericError("loss is not finite (" + std::to_string(out.loss) + ") over " + std::to_string(batch.size()) +
                           " sequences; parameters finite: " + (params.all_finite() ? "yes" : "no"));
    }
    if (!need_grad) return out;
    out.grad = params.zeros_like();
    for (std::size_t i = 0; i < params.tensors.size(); ++i) {
        auto& t = out.grad.tensors[i];
        if (!t.trainable) continue;
        for (int r = 0; r < t.rows; ++r) {
            for (int col = 0; col < t.cols; ++col) {
                const double v = static_cast<double>(G[i](r, col));
                if (!std::isfinite(v)) {
                    throw NumericError("gradient of '" + t.name + "' is not finite at (" + std::to_string(r) + ", " +
                                       std::to_string(col) + "); loss " + std::to_string(out.loss));
                }
                t.at(r, col) = v;
            }
        }
    }
    return out;
}

}  // namespace

ForwardOutput forward(const ModelParams& params, const ModelConfig& cfg, std::span<const TokenSequence> seqs,
                      const ForwardOptions& opts) {
    if (opts.precision == Precision::high) return forward_impl<double>(params, cfg, seqs, opts);
    return forward_impl<float>(params, cfg, seqs, opts);
}

double loss(const ModelParams& params, const ModelConfig& cfg, const Batch& batch, const ForwardOptions& opts) {
    if (opts.precision == Precision::high) return grad_impl<double>(params, cfg, batch, opts, false).loss;
    return grad_impl<float>(params, cfg, batch, opts, false).loss;
}

GradOutput grad(const ModelParams& params, const ModelConfig& cfg, const Batch& batch, const ForwardOptions& opts) {
    if (opts.precision == Precision::high) return grad_impl<double>(params, cfg, batch, opts, true);
    return grad_impl<float>(params, cfg, batch, opts, true);
}

}  // namespace isct
