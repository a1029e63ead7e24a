#pragma once

#include <memory>
#include <string>
#include <vector>

#include "crowddiff/diffusion.hpp"
#include "crowddiff/nn.hpp"
#include "crowddiff/schedule.hpp"
#include "crowddiff/tensor.hpp"

namespace crowddiff {

struct DenoiserConfig {
    int base_channels = 64;
    std::vector<int> channel_multipliers = {1, 2, 4, 4};
    std::vector<int> attention_depths = {2, 3};  // depth indices, 0 = full resolution
    int num_res_blocks_per_depth = 2;
    int time_embed_dim = 256;
    int in_channels = 4;   // 3 image channels + 1 density channel, concatenated
    int out_channels = 2;  // predicted noise + variance interpolation

    void validate() const;
    bool operator==(const DenoiserConfig&) const = default;
    std::string to_json() const;
    static DenoiserConfig from_json(const std::string& text);

    int depths() const { return static_cast<int>(channel_multipliers.size()); }
    int downsample_factor() const { return 1 << (depths() - 1); }
    // Width of the pooled decoder feature vector.
    int pooled_width() const;
};

// Decoder feature tensors at each resolution (deepest first) plus their
// globally pooled concatenation [B, pooled_width], independent of input size.
struct FeatureBundle {
    std::vector<Tensor> per_level;
    Tensor pooled;
};

struct PredictOutput {
    Tensor eps;         // [B,1,H,W]
    Tensor var_interp;  // [B,1,H,W]
    FeatureBundle features;
};

namespace detail {

struct ResBlock {
    int in_ch = 0, out_ch = 0;
    nn::GroupNorm gn1, gn2;
    nn::SiLU act1, act2, act_t;
    nn::Conv2d conv1, conv2, skip;  // skip is 1x1, present when in_ch != out_ch
    nn::Linear time_proj;
    bool has_skip = false;

    void build(const std::string& name, int in_c, int out_c, int time_dim, uint64_t seed);
    Tensor forward(const Tensor& x, const Tensor& temb, bool train);
    Tensor backward(const Tensor& dy, Tensor& dtemb_accum);
    void collect(std::vector<nn::Param*>& out);
};

struct AttentionBlock {
    int channels = 0;
    nn::GroupNorm gn;
    nn::Conv2d qkv, proj;  // 1x1 convs
    Tensor q_cache, k_cache, v_cache, attn_cache;

    void build(const std::string& name, int ch, uint64_t seed);
    Tensor forward(const Tensor& x, bool train);
    Tensor backward(const Tensor& dy);
    void collect(std::vector<nn::Param*>& out);
};

}  // namespace detail

// Count-regression head over the pooled decoder features; training-only and
// discarded at inference.
struct CountBranch {
    int in_width = 0;
    nn::Linear l1, l2, l3;
    nn::ReLU r1, r2, r3;

    void build(int pooled_width, uint64_t seed);
    // pooled: [B, in_width] -> non-negative counts, one per batch element.
    std::vector<double> forward(const Tensor& pooled, bool train);
    Tensor backward(const std::vector<double>& dcount);
    void collect(std::vector<nn::Param*>& out);
};

class UNet {
  public:
    UNet(const DenoiserConfig& config, uint64_t init_seed);

    // y: [B,3,H,W], xt: [B,1,H,W], all t >= 1. H and W must be divisible by
    // the downsample factor.
    PredictOutput predict(const Tensor& y, const Tensor& xt, const std::vector<int>& t,
                          bool train = false);

    // Backpropagates loss gradients w.r.t. the outputs; d_per_level carries
    // the count-branch contribution to each tapped decoder feature (may be
    // empty). Must follow a predict(..., train=true) call.
    void backward(const Tensor& d_eps, const Tensor& d_var,
                  const std::vector<Tensor>& d_per_level);

    const DenoiserConfig& config() const { return config_; }
    std::vector<nn::Param*> parameters();
    void zero_grad();

  private:
    DenoiserConfig config_;
    nn::Conv2d stem_;
    nn::Linear time_mlp1_, time_mlp2_;
    nn::SiLU time_act_;
    std::vector<detail::ResBlock> enc_blocks_;
    std::vector<detail::AttentionBlock> enc_attn_;
    std::vector<detail::ResBlock> mid_;
    detail::AttentionBlock mid_attn_;
    std::vector<detail::ResBlock> dec_blocks_;
    std::vector<detail::AttentionBlock> dec_attn_;
    std::vector<nn::Conv2d> up_convs_;
    nn::GroupNorm out_norm_;
    nn::SiLU out_act_;
    nn::Conv2d out_conv_;
    std::vector<int64_t> dec_h_channels_;  // flowing-h width per decoder block

    // per-forward caches
    Tensor temb_cache_;
    std::vector<Tensor> skips_;
    std::vector<std::vector<int64_t>> tap_shapes_;
    bool trained_forward_ = false;

    Tensor time_embedding(const std::vector<int>& t, bool train);
};

// Full model: U-Net plus the count branch.
class Denoiser : public NoisePredictor {
  public:
    Denoiser(const DenoiserConfig& config, uint64_t init_seed, bool with_count_branch = true);

    PredictOutput predict(const Tensor& y, const Tensor& xt, const std::vector<int>& t,
                          bool train = false);
    std::vector<double> regress_count(const Tensor& pooled, bool train = false);

    // d_count may be empty (no count loss). Requires a preceding train forward
    // through both predict and (if d_count nonempty) regress_count.
    void backward(const Tensor& d_eps, const Tensor& d_var, const std::vector<double>& d_count);

    Tensor predict_eps(const Tensor& y, const Tensor& xt, int t) override;

    const DenoiserConfig& config() const { return unet_.config(); }
    bool has_count_branch() const { return with_branch_; }
    CountBranch& count_branch() { return branch_; }
    std::vector<nn::Param*> parameters();
    void zero_grad();

    void save_checkpoint(const std::string& path, const NoiseSchedule& schedule) const;
    // Loads weights; throws if the stored configs differ from this model's
    // config / the expected schedule config.
    void load_checkpoint(const std::string& path, const NoiseSchedule& expected_schedule);
    static DenoiserConfig peek_config(const std::string& path, std::string* schedule_json = nullptr);

  private:
    UNet unet_;
    bool with_branch_;
    CountBranch branch_;
    std::vector<std::vector<int64_t>> last_level_shapes_;
};

}  // namespace crowddiff
