#pragma once

#include <optional>
#include <string>
#include <vector>

#include "crct/eval.hpp"
#include "crct/featurize.hpp"
#include "crct/io.hpp"
#include "crct/model.hpp"
#include "crct/qa.hpp"

namespace crct {

struct TrainConfig {
    int epochs = 20;
    double base_lr = 1e-3;
    double warmup_fraction = 0.1;
    int batch_size = 16;
    int negatives_per_positive = 3;
    double clip_norm = 1.0;
    std::uint64_t seed = 0;
    JitterConfig jitter;
    AblationFlags ablation;     // copied into the model config and the encoder
    bool two_pipelines = false;
    std::string out_dir;        // empty keeps everything in memory
};

void validate(const TrainConfig& cfg);

// k distinct wrong answers for one question; the pool is this chart's
// candidate surfaces including the regression flag
std::vector<std::string> sample_negatives(const QAItem& item, const std::vector<std::string>& pool,
                                          int k, std::uint64_t seed);

// linear warmup to base_lr over warmup_fraction of all steps, then linear
// decay to zero
double lr_at(std::int64_t step, std::int64_t total_steps, const TrainConfig& cfg);

struct Batch {
    std::vector<EncodedSample> samples;  // padded to the batch max lengths
    std::vector<std::vector<unsigned char>> v_masks;
    std::vector<std::vector<unsigned char>> t_masks;
    std::vector<std::int64_t> qa_ids;
};

struct EpochStats {
    int epoch = 0;  // 1-based
    double mean_loss = 0.0;
    double align_acc = 0.0;
    double last_lr = 0.0;
};

struct TrainResult {
    std::vector<EpochStats> history;
    ModelConfig model_cfg;  // with the vocab size and ablation flags filled in
    ParamStore params;
    std::optional<ParamStore> reg_params;  // split-pipeline ablation only
    Vocab vocab;
    std::string last_checkpoint;  // empty when out_dir is empty
};

TrainResult train(const std::vector<ChartRecord>& charts, const std::vector<QAItem>& items,
                  const TrainConfig& cfg, ModelConfig model_cfg,
                  const std::string& resume_checkpoint = "");

Scorer make_scorer(const TrainResult& result);

// assemble a Scorer from a training output directory; checkpoint is a file
// name inside it, or "latest" to follow the pointer file
Scorer load_scorer(const std::string& model_dir, const std::string& checkpoint = "latest");

}  // namespace crct
