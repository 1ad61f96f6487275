#include "mmdet/transformer.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>
#include <thread>

#include "json.hpp"

namespace mmdet {

std::string AttentionSelection::label() const {
    std::string s;
    auto app = [&s](const char* name) {
        if (!s.empty()) s += "+";
        s += name;
    };
    if (ss) app("S-S");
    if (mm) app("M-M");
    if (sm) app("S-M");
    if (ms) app("M-S");
    return s;
}

void ModelConfig::validate() const {
    auto pos = [](int v, const char* name) {
        if (v <= 0) throw std::invalid_argument(std::string("config: ") + name + " must be positive");
    };
    pos(T, "T");
    pos(Z, "Z");
    pos(L, "L");
    pos(H, "H");
    pos(Zq, "Zq");
    pos(Zk, "Zk");
    pos(Zv, "Zv");
    pos(Zm, "Zm");
    pos(C, "C");
    pos(kernel, "kernel");
    pos(epochs, "epochs");
    if (Zq != Zk) throw std::invalid_argument("config: Zq must equal Zk for dot-product compatibility");
    if (Zq % H || Zk % H || Zv % H)
        throw std::invalid_argument("config: Zq, Zk, Zv must be divisible by the head count H");
    if (kernel % 2 == 0) throw std::invalid_argument("config: conv kernel size must be odd");
    if (alpha < 0) throw std::invalid_argument("config: alpha must be nonnegative");
    if (lr < 0 || weight_decay < 0) throw std::invalid_argument("config: lr and weight_decay must be nonnegative");
}

ModelConfig paper_profile() {
    ModelConfig c;
    c.T = 2304;
    c.Z = 1024;
    c.L = 6;
    c.H = 4;  // reference table lists 3 heads; rounded to 4 so Zq/H divides evenly
    c.Zq = 512;
    c.Zk = 512;
    c.Zv = 1024;
    c.Zm = 512;
    c.C = 20;
    c.kernel = 3;
    c.alpha = 1.0;
    c.lr = 1e-5;
    c.weight_decay = 1e-6;
    c.epochs = 100;
    return c;
}

ModelConfig desk_profile() { return ModelConfig{}; }

namespace {

Tensor init_weight(std::vector<int> shape, int fan_in, std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / fan_in);
    std::uniform_real_distribution<double> ud(-limit, limit);
    Tensor t(std::move(shape));
    for (double& v : t.data) v = ud(rng);
    return t;
}

}  // namespace

ModelParams init_params(const ModelConfig& config, const AttentionSelection& selection, std::uint64_t seed) {
    config.validate();
    if (selection.enabled_count() == 0)
        throw std::invalid_argument("attention selection: at least one type must be enabled");
    std::mt19937_64 rng(seed);
    ModelParams p;
    p.config = config;
    p.selection = selection;
    const int z = config.Z;
    const int hq = config.Zq / config.H, hk = config.Zk / config.H, hv = config.Zv / config.H;
    const int fuse_in = selection.enabled_count() * config.Zv;
    for (int l = 0; l < config.L; ++l) {
        LayerParams lp;
        for (int h = 0; h < config.H; ++h) {
            HeadParams hp;
            hp.wq_s = init_weight({z, hq}, z, rng);
            hp.wk_s = init_weight({z, hk}, z, rng);
            hp.wv_s = init_weight({z, hv}, z, rng);
            hp.wq_m = init_weight({z, hq}, z, rng);
            hp.wk_m = init_weight({z, hk}, z, rng);
            hp.wv_m = init_weight({z, hv}, z, rng);
            lp.heads.push_back(std::move(hp));
        }
        lp.fuse_kernel = init_weight({config.kernel, fuse_in, z}, config.kernel * fuse_in, rng);
        lp.fuse_bias = Tensor({z});
        lp.norm1_gain = Tensor::full({z}, 1.0);
        lp.norm1_bias = Tensor({z});
        lp.has_mlp = l > 0;
        if (lp.has_mlp) {
            lp.norm2_gain = Tensor::full({z}, 1.0);
            lp.norm2_bias = Tensor({z});
            lp.mlp_w1 = init_weight({z, 4 * z}, z, rng);
            lp.mlp_b1 = Tensor({4 * z});
            lp.mlp_w2 = init_weight({4 * z, z}, 4 * z, rng);
            lp.mlp_b2 = Tensor({z});
        }
        p.layers.push_back(std::move(lp));
    }
    p.head_kernel = init_weight({config.kernel, z, config.C}, config.kernel * z, rng);
    p.head_bias = Tensor({config.C});
    return p;
}

namespace {

template <typename Self, typename Fn>
void for_each_impl(Self& self, const Fn& fn) {
    for (std::size_t l = 0; l < self.layers.size(); ++l) {
        auto& lp = self.layers[l];
        const std::string pre = "layer" + std::to_string(l) + ".";
        for (std::size_t h = 0; h < lp.heads.size(); ++h) {
            auto& hp = lp.heads[h];
            const std::string hp_pre = pre + "head" + std::to_string(h) + ".";
            fn(hp_pre + "wq_s", hp.wq_s);
            fn(hp_pre + "wk_s", hp.wk_s);
            fn(hp_pre + "wv_s", hp.wv_s);
            fn(hp_pre + "wq_m", hp.wq_m);
            fn(hp_pre + "wk_m", hp.wk_m);
            fn(hp_pre + "wv_m", hp.wv_m);
        }
        fn(pre + "fuse_kernel", lp.fuse_kernel);
        fn(pre + "fuse_bias", lp.fuse_bias);
        fn(pre + "norm1_gain", lp.norm1_gain);
        fn(pre + "norm1_bias", lp.norm1_bias);
        if (lp.has_mlp) {
            fn(pre + "norm2_gain", lp.norm2_gain);
            fn(pre + "norm2_bias", lp.norm2_bias);
            fn(pre + "mlp_w1", lp.mlp_w1);
            fn(pre + "mlp_b1", lp.mlp_b1);
            fn(pre + "mlp_w2", lp.mlp_w2);
            fn(pre + "mlp_b2", lp.mlp_b2);
        }
    }
    fn("head.kernel", self.head_kernel);
    fn("head.bias", self.head_bias);
}

}  // namespace

void ModelParams::for_each(const std::function<void(const std::string&, Tensor&)>& fn) { for_each_impl(*this, fn); }

void ModelParams::for_each(const std::function<void(const std::string&, const Tensor&)>& fn) const {
    for_each_impl(*this, fn);
}

NodeId attention(Graph& g, NodeId q, NodeId k, NodeId v, int zm) {
    if (zm <= 0) throw std::invalid_argument("attention: Zm must be positive");
    NodeId scores = g.scale(g.matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(zm)));
    return g.matmul(g.softmax_rows(scores), v);
}

namespace {

struct ParamNodeMap {
    std::vector<std::pair<std::string, NodeId>> entries;

    NodeId at(const std::string& name) const {
        for (const auto& [n, id] : entries)
            if (n == name) return id;
        throw std::logic_error("missing parameter node " + name);
    }
};

// The four attention types in fixed concat order: S-S, S-M, M-S, M-M.
NodeId mma_block(Graph& g, NodeId xs_n, NodeId xm_n, const ParamNodeMap& pm, const std::string& pre,
                 const ModelParams& p) {
    const ModelConfig& cfg = p.config;
    const AttentionSelection& sel = p.selection;
    std::vector<NodeId> parts;
    struct TypeSpec {
        bool enabled;
        bool q_spatial, kv_spatial;
    };
    const TypeSpec types[4] = {
        {sel.ss, true, true},    // S-S
        {sel.sm, true, false},   // S-M
        {sel.ms, false, true},   // M-S
        {sel.mm, false, false},  // M-M
    };
    for (const TypeSpec& ts : types) {
        if (!ts.enabled) continue;
        for (int h = 0; h < cfg.H; ++h) {
            const std::string hp = pre + "head" + std::to_string(h) + ".";
            NodeId q = g.matmul(ts.q_spatial ? xs_n : xm_n, pm.at(hp + (ts.q_spatial ? "wq_s" : "wq_m")));
            NodeId k = g.matmul(ts.kv_spatial ? xs_n : xm_n, pm.at(hp + (ts.kv_spatial ? "wk_s" : "wk_m")));
            NodeId v = g.matmul(ts.kv_spatial ? xs_n : xm_n, pm.at(hp + (ts.kv_spatial ? "wv_s" : "wv_m")));
            parts.push_back(attention(g, q, k, v, cfg.Zm));
        }
    }
    NodeId cat = g.concat_cols(parts);
    return g.conv1d(cat, pm.at(pre + "fuse_kernel"), pm.at(pre + "fuse_bias"));
}

constexpr double kNormEps = 1e-6;

void build_forward_impl(ForwardGraph& fg, const ModelParams& p, const Tensor& xs, const Tensor& xm,
                        bool track_params) {
    const ModelConfig& cfg = p.config;
    if (xs.shape.size() != 2 || xm.shape.size() != 2 || xs.cols() != cfg.Z || xm.cols() != cfg.Z ||
        xs.rows() != xm.rows())
        throw std::invalid_argument("forward: inputs must both be T x Z with Z=" + std::to_string(cfg.Z));
    Graph& g = fg.graph;
    ParamNodeMap pm;
    p.for_each([&](const std::string& name, const Tensor& t) {
        NodeId id = track_params ? g.input(t) : g.constant(t);
        pm.entries.emplace_back(name, id);
    });
    fg.params = pm.entries;
    fg.xs = g.input(xs);
    fg.xm = g.input(xm);

    // first layer: attention over the two independently normalized modalities,
    // residual adds both raw inputs
    NodeId ns = g.layer_norm(fg.xs, pm.at("layer0.norm1_gain"), pm.at("layer0.norm1_bias"), kNormEps);
    NodeId nm = g.layer_norm(fg.xm, pm.at("layer0.norm1_gain"), pm.at("layer0.norm1_bias"), kNormEps);
    NodeId o = g.add(g.add(mma_block(g, ns, nm, pm, "layer0.", p), fg.xs), fg.xm);

    // remaining layers operate on the fused stream; the modality-specific
    // projection sets stay distinct
    for (int l = 1; l < cfg.L; ++l) {
        const std::string pre = "layer" + std::to_string(l) + ".";
        NodeId n1 = g.layer_norm(o, pm.at(pre + "norm1_gain"), pm.at(pre + "norm1_bias"), kNormEps);
        NodeId o_hat = g.add(mma_block(g, n1, n1, pm, pre, p), o);
        NodeId n2 = g.layer_norm(o_hat, pm.at(pre + "norm2_gain"), pm.at(pre + "norm2_bias"), kNormEps);
        NodeId hidden = g.gelu(g.add_row(g.matmul(n2, pm.at(pre + "mlp_w1")), pm.at(pre + "mlp_b1")));
        NodeId mlp = g.add_row(g.matmul(hidden, pm.at(pre + "mlp_w2")), pm.at(pre + "mlp_b2"));
        o = g.add(mlp, o_hat);
    }

    fg.yhat = g.softmax_rows(g.conv1d(o, pm.at("head.kernel"), pm.at("head.bias")));
}

}  // namespace

void build_forward(ForwardGraph& fg, const ModelParams& p, const Tensor& xs, const Tensor& xm) {
    build_forward_impl(fg, p, xs, xm, true);
}

Tensor forward(const ModelParams& p, const Tensor& xs, const Tensor& xm) {
    ForwardGraph fg;
    build_forward_impl(fg, p, xs, xm, false);
    return fg.graph.value(fg.yhat);
}

double detection_loss_value(const Tensor& yhat, const Tensor& target_onehot, double alpha) {
    Graph g;
    NodeId y = g.constant(yhat);
    return g.value(g.detection_loss(y, target_onehot, alpha)).data[0];
}

namespace {

struct ShardResult {
    std::vector<Tensor> grads;
    double loss_sum = 0.0;
    long correct = 0;
    long total = 0;
    std::string error;
};

void run_shard(const std::vector<TrainSample>& batch, std::size_t begin, std::size_t end, const ModelParams& params,
               const std::vector<std::pair<std::string, const Tensor*>>& order, ShardResult& out) {
    try {
        out.grads.reserve(order.size());
        for (const auto& [name, t] : order) out.grads.push_back(Tensor(t->shape));
        for (std::size_t i = begin; i < end; ++i) {
            ForwardGraph fg;
            build_forward_impl(fg, params, batch[i].xs, batch[i].xm, true);
            NodeId loss = fg.graph.detection_loss(fg.yhat, batch[i].target, params.config.alpha);
            fg.graph.backward(loss);
            out.loss_sum += fg.graph.value(loss).data[0];
            for (std::size_t pi = 0; pi < order.size(); ++pi) {
                const Tensor& gp = fg.graph.grad(fg.params[pi].second);
                for (std::size_t j = 0; j < gp.data.size(); ++j) out.grads[pi].data[j] += gp.data[j];
            }
            const Tensor& yh = fg.graph.value(fg.yhat);
            for (int t = 0; t < yh.rows(); ++t) {
                int pred = 0, truth = 0;
                for (int c = 1; c < yh.cols(); ++c) {
                    if (yh.at(t, c) > yh.at(t, pred)) pred = c;
                    if (batch[i].target.at(t, c) == 1.0) truth = c;
                }
                if (batch[i].target.at(t, 0) == 1.0) truth = 0;
                out.correct += (pred == truth);
                ++out.total;
            }
        }
    } catch (const std::exception& e) {
        out.error = e.what();
    }
}

}  // namespace

TrainStats train_step(std::vector<TrainSample> const& batch, ModelParams& params, AdamState& state, int threads) {
    if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
    std::vector<std::pair<std::string, const Tensor*>> order;
    params.for_each([&order](const std::string& name, const Tensor& t) { order.emplace_back(name, &t); });

    const int nthreads = std::max(1, std::min<int>(threads, static_cast<int>(batch.size())));
    std::vector<ShardResult> results(nthreads);
    {
        std::vector<std::thread> pool;
        const std::size_t per = (batch.size() + nthreads - 1) / nthreads;
        for (int s = 0; s < nthreads; ++s) {
            const std::size_t b = s * per, e = std::min(batch.size(), b + per);
            if (b >= e) continue;
            pool.emplace_back(run_shard, std::cref(batch), b, e, std::cref(params), std::cref(order),
                              std::ref(results[s]));
        }
        for (auto& t : pool) t.join();
    }
    for (const ShardResult& r : results)
        if (!r.error.empty()) throw std::runtime_error("train_step: " + r.error);

    // deterministic reduction in shard order
    std::vector<Tensor> grads;
    grads.reserve(order.size());
    for (const auto& [name, t] : order) grads.push_back(Tensor(t->shape));
    double loss_sum = 0.0;
    long correct = 0, total = 0;
    for (const ShardResult& r : results) {
        if (r.grads.empty()) continue;
        for (std::size_t pi = 0; pi < grads.size(); ++pi)
            for (std::size_t j = 0; j < grads[pi].data.size(); ++j) grads[pi].data[j] += r.grads[pi].data[j];
        loss_sum += r.loss_sum;
        correct += r.correct;
        total += r.total;
    }
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    const double mean_loss = loss_sum * inv_n;
    if (!std::isfinite(mean_loss)) throw std::runtime_error("train_step: NaN loss, aborting");

    // Adam with decoupled weight decay
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    ++state.step;
    const double bc1 = 1.0 - std::pow(b1, state.step);
    const double bc2 = 1.0 - std::pow(b2, state.step);
    const double lr = params.config.lr, wd = params.config.weight_decay;
    std::size_t pi = 0;
    params.for_each([&](const std::string& name, Tensor& t) {
        Tensor& m = state.m.try_emplace(name, Tensor(t.shape)).first->second;
        Tensor& v = state.v.try_emplace(name, Tensor(t.shape)).first->second;
        const Tensor& g = grads[pi];
        for (std::size_t j = 0; j < t.data.size(); ++j) {
            const double gj = g.data[j] * inv_n;
            m.data[j] = b1 * m.data[j] + (1.0 - b1) * gj;
            v.data[j] = b2 * v.data[j] + (1.0 - b2) * gj * gj;
            const double mhat = m.data[j] / bc1;
            const double vhat = v.data[j] / bc2;
            t.data[j] -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * t.data[j]);
        }
        ++pi;
    });

    TrainStats stats;
    stats.loss = mean_loss;
    stats.frame_accuracy = total > 0 ? static_cast<double>(correct) / total : 0.0;
    return stats;
}

TrainResult train(std::vector<TrainSample> const& batch, ModelParams& params, double target_accuracy, int threads,
                  const std::function<void(int, const TrainStats&)>& on_epoch) {
    AdamState state;
    TrainResult result;
    for (int epoch = 0; epoch < params.config.epochs; ++epoch) {
        TrainStats stats = train_step(batch, params, state, threads);
        result.epoch_loss.push_back(stats.loss);
        result.epoch_accuracy.push_back(stats.frame_accuracy);
        result.epochs_run = epoch + 1;
        if (on_epoch) on_epoch(epoch, stats);
        if (target_accuracy > 0 && stats.frame_accuracy >= target_accuracy) {
            result.reached_target = true;
            break;
        }
    }
    if (target_accuracy > 0 && !result.epoch_accuracy.empty())
        result.reached_target = result.epoch_accuracy.back() >= target_accuracy;
    return result;
}

namespace {

Tensor projection_matrix(int in_dim, int z, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, 1.0 / std::sqrt(static_cast<double>(in_dim)));
    Tensor p({in_dim, z});
    for (double& v : p.data) v = nd(rng);
    return p;
}

// 8x8 block means per channel for one frame, appended to `row`
template <typename At>
void block_means(int h, int w, int channels, const At& at, std::vector<double>& row) {
    for (int by = 0; by < 8; ++by)
        for (int bx = 0; bx < 8; ++bx) {
            const int y0 = by * h / 8, y1 = (by + 1) * h / 8;
            const int x0 = bx * w / 8, x1 = (bx + 1) * w / 8;
            for (int c = 0; c < channels; ++c) {
                double acc = 0.0;
                for (int y = y0; y < y1; ++y)
                    for (int x = x0; x < x1; ++x) acc += at(y, x, c);
                row.push_back(acc / ((y1 - y0) * (x1 - x0)));
            }
        }
}

}  // namespace

Tensor embed_toy(const VideoFrames& frames, int z, std::uint64_t seed) {
    if (frames.height < 8 || frames.width < 8)
        throw std::invalid_argument("embed_toy: frames must be at least 8x8");
    const int in_dim = 64 * frames.channels;
    const Tensor proj = projection_matrix(in_dim, z, seed);
    Tensor out({frames.frames, z});
    std::vector<double> row;
    for (int t = 0; t < frames.frames; ++t) {
        row.clear();
        block_means(frames.height, frames.width, frames.channels,
                    [&](int y, int x, int c) { return static_cast<double>(frames.at(t, y, x, c)); }, row);
        for (int j = 0; j < z; ++j) {
            double acc = 0.0;
            for (int i = 0; i < in_dim; ++i) acc += row[i] * proj.at(i, j);
            out.at(t, j) = acc;
        }
    }
    return out;
}

Tensor embed_toy(const std::vector<FlowField>& flows, int z, std::uint64_t seed) {
    if (flows.empty()) throw std::invalid_argument("embed_toy: empty flow sequence");
    const int h = flows[0].height, w = flows[0].width;
    for (const FlowField& f : flows)
        if (f.height != h || f.width != w) throw std::invalid_argument("embed_toy: inconsistent flow sizes");
    if (h < 8 || w < 8) throw std::invalid_argument("embed_toy: flow fields must be at least 8x8");
    const int in_dim = 64 * 2;
    const Tensor proj = projection_matrix(in_dim, z, seed);
    Tensor out({static_cast<int>(flows.size()), z});
    std::vector<double> row;
    for (std::size_t t = 0; t < flows.size(); ++t) {
        row.clear();
        block_means(h, w, 2,
                    [&](int y, int x, int c) { return c == 0 ? flows[t].u(x, y) : flows[t].v(x, y); }, row);
        for (int j = 0; j < z; ++j) {
            double acc = 0.0;
            for (int i = 0; i < in_dim; ++i) acc += row[i] * proj.at(i, j);
            out.at(static_cast<int>(t), j) = acc;
        }
    }
    return out;
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
    nlohmann::ordered_json j;
    j["version"] = 1;
    const ModelConfig& c = params.config;
    j["config"] = {{"T", c.T},           {"Z", c.Z},
                   {"L", c.L},           {"H", c.H},
                   {"Zq", c.Zq},         {"Zk", c.Zk},
                   {"Zv", c.Zv},         {"Zm", c.Zm},
                   {"C", c.C},           {"kernel", c.kernel},
                   {"alpha", c.alpha},   {"lr", c.lr},
                   {"weight_decay", c.weight_decay},
                   {"epochs", c.epochs}, {"seed", c.seed}};
    j["selection"] = {{"ss", params.selection.ss},
                      {"mm", params.selection.mm},
                      {"sm", params.selection.sm},
                      {"ms", params.selection.ms}};
    nlohmann::ordered_json tensors = nlohmann::ordered_json::object();
    params.for_each([&tensors](const std::string& name, const Tensor& t) {
        tensors[name] = {{"shape", t.shape}, {"data", t.data}};
    });
    j["params"] = std::move(tensors);
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error(path.string() + ": cannot open for write");
    out << j.dump() << '\n';
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error(path.string() + ": cannot open");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(path.string() + ": invalid JSON: " + e.what());
    }
    if (!j.contains("version") || j["version"].get<int>() != 1)
        throw std::runtime_error(path.string() + ": unsupported checkpoint version");
    ModelConfig c;
    const auto& cj = j.at("config");
    c.T = cj.at("T");
    c.Z = cj.at("Z");
    c.L = cj.at("L");
    c.H = cj.at("H");
    c.Zq = cj.at("Zq");
    c.Zk = cj.at("Zk");
    c.Zv = cj.at("Zv");
    c.Zm = cj.at("Zm");
    c.C = cj.at("C");
    c.kernel = cj.at("kernel");
    c.alpha = cj.at("alpha");
    c.lr = cj.at("lr");
    c.weight_decay = cj.at("weight_decay");
    c.epochs = cj.at("epochs");
    c.seed = cj.at("seed");
    AttentionSelection sel;
    const auto& sj = j.at("selection");
    sel.ss = sj.at("ss");
    sel.mm = sj.at("mm");
    sel.sm = sj.at("sm");
    sel.ms = sj.at("ms");
    ModelParams p = init_params(c, sel, c.seed);
    const auto& tj = j.at("params");
    p.for_each([&tj, &path](const std::string& name, Tensor& t) {
        if (!tj.contains(name)) throw std::runtime_error(path.string() + ": missing parameter " + name);
        const auto& e = tj.at(name);
        std::vector<int> shape = e.at("shape").get<std::vector<int>>();
        if (shape != t.shape)
            throw std::runtime_error(path.string() + ": shape mismatch for " + name);
        t.data = e.at("data").get<std::vector<double>>();
    });
    return p;
}

}  // namespace mmdet
