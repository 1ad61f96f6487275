#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mmdet/flow.hpp"
#include "mmdet/tensor.hpp"

namespace mmdet {

struct AttentionSelection {
    bool ss = true;
    bool mm = true;
    bool sm = true;
    bool ms = true;

    int enabled_count() const { return int(ss) + int(mm) + int(sm) + int(ms); }
    std::string label() const;
};

struct ModelConfig {
    int T = 64;
    int Z = 32;
    int L = 2;
    int H = 4;
    int Zq = 32;
    int Zk = 32;
    int Zv = 32;
    int Zm = 8;
    int C = 4;
    int kernel = 3;
    double alpha = 1.0;
    double lr = 3e-3;
    double weight_decay = 1e-6;
    int epochs = 300;
    std::uint64_t seed = 1;

    void validate() const;  // positivity, Zq == Zk, head divisibility
};

// Table-style reference configuration (documented profile; H rounded up to 4
// so the head split divides evenly).
ModelConfig paper_profile();
ModelConfig desk_profile();

struct HeadParams {
    Tensor wq_s, wk_s, wv_s;  // Z x Zq/H, Z x Zk/H, Z x Zv/H
    Tensor wq_m, wk_m, wv_m;
};

struct LayerParams {
    std::vector<HeadParams> heads;
    Tensor fuse_kernel;  // kernel x (enabled*Zv) x Z
    Tensor fuse_bias;    // Z
    Tensor norm1_gain, norm1_bias;
    // MLP sub-block (layers >= 2 only; layer 1 follows the attention-only
    // first-layer recurrence)
    Tensor norm2_gain, norm2_bias;
    Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
    bool has_mlp = false;
};

struct ModelParams {
    ModelConfig config;
    AttentionSelection selection;
    std::vector<LayerParams> layers;
    Tensor head_kernel;  // kernel x Z x C
    Tensor head_bias;    // C

    // Visit every parameter tensor with a stable name, in a fixed order.
    void for_each(const std::function<void(const std::string&, Tensor&)>& fn);
    void for_each(const std::function<void(const std::string&, const Tensor&)>& fn) const;
};

ModelParams init_params(const ModelConfig& config, const AttentionSelection& selection, std::uint64_t seed);

// Scaled dot-product attention on an existing graph: softmax(Q K^T / sqrt(Zm)) V.
NodeId attention(Graph& g, NodeId q, NodeId k, NodeId v, int zm);

struct ForwardGraph {
    Graph graph;
    NodeId xs = -1;
    NodeId xm = -1;
    NodeId yhat = -1;
    std::vector<std::pair<std::string, NodeId>> params;
};

// Builds the full forward pass; yhat rows live on the simplex.
void build_forward(ForwardGraph& fg, const ModelParams& p, const Tensor& xs, const Tensor& xm);

// Plain forward without gradient bookkeeping on the parameters.
Tensor forward(const ModelParams& p, const Tensor& xs, const Tensor& xm);

// Standalone loss evaluation (same formula as Graph::detection_loss).
double detection_loss_value(const Tensor& yhat, const Tensor& target_onehot, double alpha);

struct AdamState {
    std::map<std::string, Tensor> m;
    std::map<std::string, Tensor> v;
    int step = 0;
};

struct TrainSample {
    Tensor xs;      // T x Z
    Tensor xm;      // T x Z
    Tensor target;  // T x C one-hot
};

struct TrainStats {
    double loss = 0.0;
    double frame_accuracy = 0.0;
};

// One Adam step with decoupled weight decay on the mean batch loss.
// Gradient accumulation may shard across threads; shard sums are reduced in
// index order, so results are deterministic.
TrainStats train_step(std::vector<TrainSample> const& batch, ModelParams& params, AdamState& state, int threads = 1);

struct TrainResult {
    std::vector<double> epoch_loss;
    std::vector<double> epoch_accuracy;
    int epochs_run = 0;
    bool reached_target = false;
};

// Full-batch training loop with optional accuracy-based early stop
// (target <= 0 disables it).
TrainResult train(std::vector<TrainSample> const& batch, ModelParams& params, double target_accuracy, int threads = 1,
                  const std::function<void(int, const TrainStats&)>& on_epoch = nullptr);

struct VideoFrames {
    int frames = 0, height = 0, width = 0, channels = 0;
    std::vector<float> data;  // t, y, x, c order

    float at(int t, int y, int x, int c) const {
        return data[((static_cast<std::size_t>(t) * height + y) * width + x) * channels + c];
    }
    float& at(int t, int y, int x, int c) {
        return data[((static_cast<std::size_t>(t) * height + y) * width + x) * channels + c];
    }
};

// Deterministic toy embedder: 8x8 block means per channel, then a seed-fixed
// random projection to Z.
Tensor embed_toy(const VideoFrames& frames, int z, std::uint64_t seed);
Tensor embed_toy(const std::vector<FlowField>& flows, int z, std::uint64_t seed);

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace mmdet
