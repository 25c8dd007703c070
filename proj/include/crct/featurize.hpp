#pragma once

#include <array>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "crct/chart.hpp"

namespace crct {

inline constexpr int kDetFeatureDim = 20;  // 3 color + 6 geometry + 11 smoothed class
inline constexpr int kNumVisualClasses = kNumElementClasses + 1;
inline constexpr int kGlobalVisualClass = kNumElementClasses;

enum class TextClass {
    title,
    x_label,
    y_label,
    x_ticklabel,
    y_ticklabel,
    legend_label,
    question,
    answer,
    separator
};
inline constexpr int kNumTextClasses = 9;

inline constexpr const char* kPadToken = "[PAD]";
inline constexpr const char* kClsToken = "[CLS]";
inline constexpr const char* kSepToken = "[SEP]";
inline constexpr const char* kUnkToken = "[UNK]";
inline constexpr const char* kRegToken = "<R>";
inline constexpr int kPadId = 0;
inline constexpr int kClsId = 1;
inline constexpr int kSepId = 2;
inline constexpr int kUnkId = 3;
inline constexpr int kRegId = 4;

struct Detection {
    ElementClass element_class = ElementClass::bar;
    BBox bbox;
    std::optional<std::string> text;
    std::optional<Rgb> color;
    std::vector<double> feature_vector;
    double iou_with_gt = 1.0;
    int source_index = -1;  // position in the annotated element list, bookkeeping only
};

struct JitterConfig {
    double sigma = 0.0;      // per-coordinate Gaussian, normalized units
    double drop_prob = 0.0;  // simulated detector misses
};

double iou(const BBox& a, const BBox& b);

std::vector<Detection> oracle_detect(const ElementSet& gt, const JitterConfig& noise,
                                     std::uint64_t seed);

std::vector<double> handcrafted_feature(const BBox& bbox, const std::optional<Rgb>& color,
                                        ElementClass element_class);

std::vector<std::string> tokenize(const std::string& text);

class Vocab {
  public:
    Vocab();
    int add(const std::string& token);  // appends if unknown, returns id
    int id(const std::string& token) const;  // [UNK] for out-of-vocabulary tokens
    const std::string& token(int id) const;
    bool contains(const std::string& token) const;
    int size() const { return static_cast<int>(id_to_token_.size()); }

  private:
    std::unordered_map<std::string, int> token_to_id_;
    std::vector<std::string> id_to_token_;
};

Vocab build_vocab(const std::vector<std::string>& corpus, int min_freq);
void save_vocab(const std::string& path, const Vocab& vocab);
Vocab load_vocab(const std::string& path);

struct VisualToken {
    std::array<double, 4> bbox4{};
    int class_id = 0;
    std::vector<double> det_feature;
    int source_index = -1;
};

struct TextToken {
    int token_id = 0;
    int position_index = 0;
    std::array<double, 4> bbox4{};
    int text_class_id = 0;
};

struct AblationFlags {
    bool drop_legend_marker = false;
    bool drop_text_class_emb = false;    // consumed by the model
    bool drop_visual_class_emb = false;  // consumed by the model
    bool visual_bbox_only = false;

    bool operator==(const AblationFlags&) const = default;
};

struct EncodeOptions {
    int max_visual = 64;
    int max_text = 128;
    AblationFlags ablation;
};

struct EncodedSample {
    std::vector<VisualToken> visual_seq;
    std::vector<TextToken> text_seq;
    bool is_reg_target = false;
    int class_target = 0;     // alignment label C
    double reg_target = 0.0;  // normalized R, valid iff is_reg_target
};

EncodedSample encode_sample(const ChartSpec& spec, const std::vector<Detection>& dets,
                            const std::string& question, const std::string& answer,
                            const Vocab& vocab, const EncodeOptions& opts = {});

}  // namespace crct
