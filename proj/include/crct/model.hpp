#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "crct/featurize.hpp"
#include "crct/io.hpp"
#include "crct/tensor.hpp"

namespace crct {

struct ModelConfig {
    int d_model = 128;
    int n_blocks = 2;
    int n_heads = 4;
    int d_ff = 512;
    int d_det = kDetFeatureDim;
    int vocab_size = 0;
    int n_visual_classes = kNumVisualClasses;
    int n_text_classes = kNumTextClasses;
    int max_positions = 128;
    double lambda1 = 1.0;
    double lambda2 = 1.0;
    AblationFlags ablation;

    bool operator==(const ModelConfig&) const = default;
};

void validate(const ModelConfig& cfg);
Json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const Json& j);

class ParamStore {
  public:
    Tensor& create(const std::string& name, Tensor t);
    const Tensor& at(const std::string& name) const;
    Tensor& at(const std::string& name);
    bool has(const std::string& name) const;
    std::vector<Tensor> all() const;  // name-sorted, the canonical optimizer order
    std::vector<std::string> names() const;
    std::size_t size() const { return by_name_.size(); }

  private:
    std::map<std::string, Tensor> by_name_;
};

ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed);

struct StreamState {
    Tensor h_v;  // n_v x d_model, row 0 is the global token
    Tensor h_t;  // n_t x d_model, row 0 is [CLS]
    std::vector<unsigned char> v_mask;  // nonzero marks padded rows; empty means none
    std::vector<unsigned char> t_mask;
};

struct PooledPair {
    Tensor h_v0;  // 1 x d_model
    Tensor h_w0;  // 1 x d_model
};

struct HeadOutputs {
    Tensor align_logit;  // {1}
    Tensor align_score;  // {1}, sigmoid of the logit
    Tensor reg_value;    // {1}, normalized target space
};

struct AttnRecord {
    std::string name;
    int rows = 0;
    int cols = 0;
    Eigen::ArrayXd probs;  // row-major rows x cols, post softmax
};
using AttnTrace = std::vector<AttnRecord>;

Tensor embed_visual(const std::vector<VisualToken>& tokens, const ParamStore& params,
                    const ModelConfig& cfg);
Tensor embed_text(const std::vector<TextToken>& tokens, const ParamStore& params,
                  const ModelConfig& cfg);
StreamState embed_sample(const EncodedSample& sample, const ParamStore& params,
                         const ModelConfig& cfg);

StreamState co_attention_block(const StreamState& state, const ParamStore& params,
                               const ModelConfig& cfg, int block_index,
                               AttnTrace* trace = nullptr);
StreamState run_blocks(StreamState state, const ParamStore& params, const ModelConfig& cfg,
                       AttnTrace* trace = nullptr);
PooledPair pool(const StreamState& state);
PooledPair encode(const EncodedSample& sample, const ParamStore& params, const ModelConfig& cfg,
                  AttnTrace* trace = nullptr);

HeadOutputs heads(const PooledPair& pair, const ParamStore& params, const ModelConfig& cfg);

Tensor combined_loss(const HeadOutputs& out, int target_c, std::optional<double> target_r,
                     bool is_reg, double lambda1, double lambda2);

struct Checkpoint {
    ModelConfig cfg;
    std::map<std::string, Tensor> tensors;
    bool has_adam = false;
    std::int64_t adam_step = 0;
    double adam_lr = 0.0, adam_beta1 = 0.0, adam_beta2 = 0.0, adam_eps = 0.0;
    std::map<std::string, std::pair<Eigen::ArrayXd, Eigen::ArrayXd>> adam_moments;
};

void write_checkpoint(const std::string& path, const ModelConfig& cfg, const ParamStore& params,
                      const Adam* adam = nullptr);
Checkpoint read_checkpoint(const std::string& path);
// rebuilds a ParamStore from a checkpoint, requiring an exact config match
ParamStore params_from_checkpoint(const Checkpoint& ckpt, const ModelConfig& expected);

}  // namespace crct
