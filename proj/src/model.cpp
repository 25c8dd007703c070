#include "crct/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "crct/common.hpp"

namespace crct {

namespace {

void require_key(const Json& j, const char* key, const char* where) {
    if (!j.contains(key))
        throw ConfigError(std::string(where) + ": missing key '" + key + "'");
}

enum class Init { xavier, gauss, zero, one };

struct ParamSpec {
    std::string name;
    std::vector<int> shape;
    Init init;
};

void push_encoder_specs(std::vector<ParamSpec>& out, const std::string& pre,
                        const ModelConfig& cfg) {
    const int d = cfg.d_model;
    out.push_back({pre + "q.w", {d, d}, Init::xavier});
    out.push_back({pre + "q.b", {d}, Init::zero});
    out.push_back({pre + "k.w", {d, d}, Init::xavier});
    out.push_back({pre + "k.b", {d}, Init::zero});
    out.push_back({pre + "v.w", {d, d}, Init::xavier});
    out.push_back({pre + "v.b", {d}, Init::zero});
    out.push_back({pre + "o.w", {d, d}, Init::xavier});
    out.push_back({pre + "o.b", {d}, Init::zero});
    out.push_back({pre + "ln1.g", {d}, Init::one});
    out.push_back({pre + "ln1.b", {d}, Init::zero});
    out.push_back({pre + "ff.w1", {d, cfg.d_ff}, Init::xavier});
    out.push_back({pre + "ff.b1", {cfg.d_ff}, Init::zero});
    out.push_back({pre + "ff.w2", {cfg.d_ff, d}, Init::xavier});
    out.push_back({pre + "ff.b2", {d}, Init::zero});
    out.push_back({pre + "ln2.g", {d}, Init::one});
    out.push_back({pre + "ln2.b", {d}, Init::zero});
}

std::string block_prefix(int block, const char* stream, const char* sub) {
    return "block" + std::to_string(block) + "." + stream + "." + sub + ".";
}

std::vector<ParamSpec> param_specs(const ModelConfig& cfg) {
    const int d = cfg.d_model;
    std::vector<ParamSpec> out;
    out.push_back({"embed.visual.bbox.w", {4, d}, Init::xavier});
    out.push_back({"embed.visual.bbox.b", {d}, Init::zero});
    out.push_back({"embed.visual.class", {cfg.n_visual_classes, d}, Init::gauss});
    out.push_back({"embed.visual.det.w", {cfg.d_det, d}, Init::xavier});
    out.push_back({"embed.visual.det.b", {d}, Init::zero});
    out.push_back({"embed.text.word", {cfg.vocab_size, d}, Init::gauss});
    out.push_back({"embed.text.pos", {cfg.max_positions, d}, Init::gauss});
    out.push_back({"embed.text.bbox.w", {4, d}, Init::xavier});
    out.push_back({"embed.text.bbox.b", {d}, Init::zero});
    out.push_back({"embed.text.class", {cfg.n_text_classes, d}, Init::gauss});
    for (int b = 0; b < cfg.n_blocks; ++b) {
        push_encoder_specs(out, block_prefix(b, "v", "co"), cfg);
        push_encoder_specs(out, block_prefix(b, "t", "co"), cfg);
        push_encoder_specs(out, block_prefix(b, "v", "self"), cfg);
        push_encoder_specs(out, block_prefix(b, "t", "self"), cfg);
    }
    out.push_back({"head.cls.w1", {d, d}, Init::xavier});
    out.push_back({"head.cls.b1", {d}, Init::zero});
    out.push_back({"head.cls.w2", {d, 1}, Init::xavier});
    out.push_back({"head.cls.b2", {1}, Init::zero});
    out.push_back({"head.reg.w1", {2 * d, d}, Init::xavier});
    out.push_back({"head.reg.b1", {d}, Init::zero});
    out.push_back({"head.reg.w2", {d, 1}, Init::xavier});
    out.push_back({"head.reg.b2", {1}, Init::zero});
    return out;
}

std::string shape_text(const std::vector<int>& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

// Q comes from x under q_pre, K/V from kv under kv_pre; the output projection
// belongs to the consuming stream (q_pre). key_mask marks padded kv rows.
Tensor multi_head_attention(const Tensor& x, const Tensor& kv, const ParamStore& p,
                            const std::string& q_pre, const std::string& kv_pre,
                            const std::vector<unsigned char>& key_mask, const ModelConfig& cfg,
                            AttnTrace* trace, const std::string& name) {
    const int n_q = x.dim(0);
    const int n_k = kv.dim(0);
    if (!key_mask.empty() && static_cast<int>(key_mask.size()) != n_k)
        throw ShapeError("attention mask has " + std::to_string(key_mask.size()) +
                         " entries but there are " + std::to_string(n_k) + " keys");
    const Tensor q = add(matmul(x, p.at(q_pre + "q.w")), p.at(q_pre + "q.b"));
    const Tensor k = add(matmul(kv, p.at(kv_pre + "k.w")), p.at(kv_pre + "k.b"));
    const Tensor v = add(matmul(kv, p.at(kv_pre + "v.w")), p.at(kv_pre + "v.b"));
    const int dh = cfg.d_model / cfg.n_heads;
    std::vector<Tensor> head_out;
    head_out.reserve(static_cast<std::size_t>(cfg.n_heads));
    for (int h = 0; h < cfg.n_heads; ++h) {
        const Tensor qh = slice(q, 1, h * dh, dh);
        const Tensor kh = slice(k, 1, h * dh, dh);
        const Tensor vh = slice(v, 1, h * dh, dh);
        Tensor scores = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
        if (!key_mask.empty()) scores = masked_fill(scores, key_mask, -1e30);
        const Tensor probs = softmax(scores);
        if (trace) trace->push_back({name + ".h" + std::to_string(h), n_q, n_k, probs.value()});
        head_out.push_back(matmul(probs, vh));
    }
    const Tensor cat = cfg.n_heads == 1 ? head_out[0] : concat(head_out, 1);
    return add(matmul(cat, p.at(q_pre + "o.w")), p.at(q_pre + "o.b"));
}

// attention -> residual + layer norm -> feed-forward -> residual + layer norm
Tensor encoder_sublayer(const Tensor& x, const Tensor& kv, const ParamStore& p,
                        const std::string& q_pre, const std::string& kv_pre,
                        const std::vector<unsigned char>& key_mask, const ModelConfig& cfg,
                        AttnTrace* trace, const std::string& name) {
    const Tensor a = multi_head_attention(x, kv, p, q_pre, kv_pre, key_mask, cfg, trace, name);
    const Tensor z = layer_norm(add(x, a), p.at(q_pre + "ln1.g"), p.at(q_pre + "ln1.b"));
    const Tensor hidden = gelu(add(matmul(z, p.at(q_pre + "ff.w1")), p.at(q_pre + "ff.b1")));
    const Tensor f = add(matmul(hidden, p.at(q_pre + "ff.w2")), p.at(q_pre + "ff.b2"));
    return layer_norm(add(z, f), p.at(q_pre + "ln2.g"), p.at(q_pre + "ln2.b"));
}

void check_state(const StreamState& state, const ModelConfig& cfg) {
    if (state.h_v.ndim() != 2 || state.h_t.ndim() != 2)
        throw ShapeError("stream states must be 2-D");
    if (state.h_v.dim(1) != cfg.d_model || state.h_t.dim(1) != cfg.d_model)
        throw ShapeError("stream width does not match d_model=" + std::to_string(cfg.d_model));
    if (!state.v_mask.empty() && static_cast<int>(state.v_mask.size()) != state.h_v.dim(0))
        throw ShapeError("visual mask has " + std::to_string(state.v_mask.size()) +
                         " entries for " + std::to_string(state.h_v.dim(0)) + " rows");
    if (!state.t_mask.empty() && static_cast<int>(state.t_mask.size()) != state.h_t.dim(0))
        throw ShapeError("text mask has " + std::to_string(state.t_mask.size()) +
                         " entries for " + std::to_string(state.h_t.dim(0)) + " rows");
}

template <typename T>
void write_raw(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw DataError("truncated checkpoint");
    return v;
}

void write_str(std::ostream& os, const std::string& s) {
    write_raw<std::uint64_t>(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_str(std::istream& is) {
    const auto n = read_raw<std::uint64_t>(is);
    if (n > (1u << 26)) throw DataError("checkpoint string length is implausible");
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    if (!is) throw DataError("truncated checkpoint");
    return s;
}

void require_little_endian() {
    const std::uint16_t probe = 1;
    if (*reinterpret_cast<const unsigned char*>(&probe) != 1)
        throw Error("checkpoint format requires a little-endian host");
}

constexpr char kCkptMagic[8] = {'C', 'R', 'C', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCkptVersion = 1;

}  // namespace

void validate(const ModelConfig& cfg) {
    if (cfg.d_model < 1) throw ConfigError("d_model must be positive");
    if (cfg.n_heads < 1) throw ConfigError("n_heads must be positive");
    if (cfg.d_model % cfg.n_heads != 0)
        throw ConfigError("d_model=" + std::to_string(cfg.d_model) +
                          " is not divisible by n_heads=" + std::to_string(cfg.n_heads));
    if (cfg.n_blocks < 0) throw ConfigError("n_blocks must be >= 0");
    if (cfg.d_ff < 1) throw ConfigError("d_ff must be positive");
    if (cfg.d_det < 1) throw ConfigError("d_det must be positive");
    if (cfg.vocab_size < kRegId + 1)
        throw ConfigError("vocab_size must cover at least the special tokens");
    if (cfg.n_visual_classes < 1) throw ConfigError("n_visual_classes must be positive");
    if (cfg.n_text_classes < 1) throw ConfigError("n_text_classes must be positive");
    if (cfg.max_positions < 2) throw ConfigError("max_positions must be at least 2");
    if (cfg.lambda1 < 0.0 || cfg.lambda2 < 0.0)
        throw ConfigError("loss weights must be non-negative");
}

Json to_json(const ModelConfig& cfg) {
    Json a;
    a["drop_legend_marker"] = cfg.ablation.drop_legend_marker;
    a["drop_text_class_emb"] = cfg.ablation.drop_text_class_emb;
    a["drop_visual_class_emb"] = cfg.ablation.drop_visual_class_emb;
    a["visual_bbox_only"] = cfg.ablation.visual_bbox_only;
    Json j;
    j["d_model"] = cfg.d_model;
    j["n_blocks"] = cfg.n_blocks;
    j["n_heads"] = cfg.n_heads;
    j["d_ff"] = cfg.d_ff;
    j["d_det"] = cfg.d_det;
    j["vocab_size"] = cfg.vocab_size;
    j["n_visual_classes"] = cfg.n_visual_classes;
    j["n_text_classes"] = cfg.n_text_classes;
    j["max_positions"] = cfg.max_positions;
    j["lambda1"] = cfg.lambda1;
    j["lambda2"] = cfg.lambda2;
    j["ablation"] = a;
    return j;
}

ModelConfig model_config_from_json(const Json& j) {
    static const std::vector<std::string> known = {
        "d_model",   "n_blocks",         "n_heads",       "d_ff",          "d_det",
        "vocab_size", "n_visual_classes", "n_text_classes", "max_positions", "lambda1",
        "lambda2",   "ablation"};
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw ConfigError("model config: unknown key '" + key + "'");
    }
    ModelConfig cfg;
    require_key(j, "d_model", "model config");
    require_key(j, "n_blocks", "model config");
    require_key(j, "n_heads", "model config");
    require_key(j, "d_ff", "model config");
    require_key(j, "d_det", "model config");
    require_key(j, "vocab_size", "model config");
    require_key(j, "n_visual_classes", "model config");
    require_key(j, "n_text_classes", "model config");
    require_key(j, "max_positions", "model config");
    require_key(j, "lambda1", "model config");
    require_key(j, "lambda2", "model config");
    cfg.d_model = j.at("d_model").get<int>();
    cfg.n_blocks = j.at("n_blocks").get<int>();
    cfg.n_heads = j.at("n_heads").get<int>();
    cfg.d_ff = j.at("d_ff").get<int>();
    cfg.d_det = j.at("d_det").get<int>();
    cfg.vocab_size = j.at("vocab_size").get<int>();
    cfg.n_visual_classes = j.at("n_visual_classes").get<int>();
    cfg.n_text_classes = j.at("n_text_classes").get<int>();
    cfg.max_positions = j.at("max_positions").get<int>();
    cfg.lambda1 = j.at("lambda1").get<double>();
    cfg.lambda2 = j.at("lambda2").get<double>();
    if (j.contains("ablation")) {
        const Json& a = j.at("ablation");
        static const std::vector<std::string> aknown = {
            "drop_legend_marker", "drop_text_class_emb", "drop_visual_class_emb",
            "visual_bbox_only"};
        for (const auto& [key, value] : a.items()) {
            (void)value;
            if (std::find(aknown.begin(), aknown.end(), key) == aknown.end())
                throw ConfigError("model config ablation: unknown key '" + key + "'");
        }
        if (a.contains("drop_legend_marker"))
            cfg.ablation.drop_legend_marker = a.at("drop_legend_marker").get<bool>();
        if (a.contains("drop_text_class_emb"))
            cfg.ablation.drop_text_class_emb = a.at("drop_text_class_emb").get<bool>();
        if (a.contains("drop_visual_class_emb"))
            cfg.ablation.drop_visual_class_emb = a.at("drop_visual_class_emb").get<bool>();
        if (a.contains("visual_bbox_only"))
            cfg.ablation.visual_bbox_only = a.at("visual_bbox_only").get<bool>();
    }
    validate(cfg);
    return cfg;
}

Tensor& ParamStore::create(const std::string& name, Tensor t) {
    auto [it, inserted] = by_name_.emplace(name, std::move(t));
    if (!inserted) throw Error("duplicate parameter name: " + name);
    return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
    const auto it = by_name_.find(name);
    if (it == by_name_.end()) throw Error("unknown parameter: " + name);
    return it->second;
}

Tensor& ParamStore::at(const std::string& name) {
    const auto it = by_name_.find(name);
    if (it == by_name_.end()) throw Error("unknown parameter: " + name);
    return it->second;
}

bool ParamStore::has(const std::string& name) const { return by_name_.count(name) != 0; }

std::vector<Tensor> ParamStore::all() const {
    std::vector<Tensor> out;
    out.reserve(by_name_.size());
    for (const auto& [name, t] : by_name_) {
        (void)name;
        out.push_back(t);
    }
    return out;
}

std::vector<std::string> ParamStore::names() const {
    std::vector<std::string> out;
    out.reserve(by_name_.size());
    for (const auto& [name, t] : by_name_) {
        (void)t;
        out.push_back(name);
    }
    return out;
}

ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed) {
    validate(cfg);
    Rng rng(derive_seed(seed, 0x1417));
    ParamStore store;
    for (const ParamSpec& spec : param_specs(cfg)) {
        Tensor t = spec.init == Init::one ? Tensor::full(spec.shape, 1.0, true)
                                          : Tensor::zeros(spec.shape, true);
        Eigen::ArrayXd& raw = t.raw();
        if (spec.init == Init::xavier) {
            const double fan_in = static_cast<double>(spec.shape[0]);
            const double fan_out = static_cast<double>(spec.shape[1]);
            const double limit = std::sqrt(6.0 / (fan_in + fan_out));
            for (std::int64_t i = 0; i < raw.size(); ++i) raw[i] = rng.uniform(-limit, limit);
        } else if (spec.init == Init::gauss) {
            for (std::int64_t i = 0; i < raw.size(); ++i) raw[i] = rng.normal(0.0, 0.02);
        }
        store.create(spec.name, std::move(t));
    }
    return store;
}

Tensor embed_visual(const std::vector<VisualToken>& tokens, const ParamStore& params,
                    const ModelConfig& cfg) {
    const int n = static_cast<int>(tokens.size());
    if (n == 0) throw ShapeError("embed_visual: empty sequence");
    std::vector<double> bbox_flat;
    std::vector<double> det_flat;
    std::vector<int> class_ids;
    bbox_flat.reserve(static_cast<std::size_t>(n) * 4);
    det_flat.reserve(static_cast<std::size_t>(n) * static_cast<std::size_t>(cfg.d_det));
    class_ids.reserve(static_cast<std::size_t>(n));
    for (const VisualToken& tok : tokens) {
        if (tok.class_id < 0 || tok.class_id >= cfg.n_visual_classes)
            throw ShapeError("embed_visual: class id " + std::to_string(tok.class_id) +
                             " outside [0," + std::to_string(cfg.n_visual_classes) + ")");
        if (static_cast<int>(tok.det_feature.size()) != cfg.d_det)
            throw ShapeError("embed_visual: det feature has " +
                             std::to_string(tok.det_feature.size()) + " entries, expected " +
                             std::to_string(cfg.d_det));
        bbox_flat.insert(bbox_flat.end(), tok.bbox4.begin(), tok.bbox4.end());
        det_flat.insert(det_flat.end(), tok.det_feature.begin(), tok.det_feature.end());
        class_ids.push_back(tok.class_id);
    }
    const Tensor bbox_in = Tensor::from_vector({n, 4}, bbox_flat);
    Tensor out = add(matmul(bbox_in, params.at("embed.visual.bbox.w")),
                     params.at("embed.visual.bbox.b"));
    if (!cfg.ablation.drop_visual_class_emb)
        out = add(out, embedding(params.at("embed.visual.class"), class_ids));
    if (!cfg.ablation.visual_bbox_only) {
        const Tensor det_in = Tensor::from_vector({n, cfg.d_det}, det_flat);
        out = add(out, add(matmul(det_in, params.at("embed.visual.det.w")),
                           params.at("embed.visual.det.b")));
    }
    return out;
}

Tensor embed_text(const std::vector<TextToken>& tokens, const ParamStore& params,
                  const ModelConfig& cfg) {
    const int n = static_cast<int>(tokens.size());
    if (n == 0) throw ShapeError("embed_text: empty sequence");
    std::vector<double> bbox_flat;
    std::vector<int> word_ids, pos_ids, class_ids;
    bbox_flat.reserve(static_cast<std::size_t>(n) * 4);
    word_ids.reserve(static_cast<std::size_t>(n));
    pos_ids.reserve(static_cast<std::size_t>(n));
    class_ids.reserve(static_cast<std::size_t>(n));
    for (const TextToken& tok : tokens) {
        if (tok.token_id < 0 || tok.token_id >= cfg.vocab_size)
            throw ShapeError("embed_text: token id " + std::to_string(tok.token_id) +
                             " outside [0," + std::to_string(cfg.vocab_size) + ")");
        if (tok.position_index < 0 || tok.position_index >= cfg.max_positions)
            throw DataError("embed_text: position " + std::to_string(tok.position_index) +
                            " exceeds max_positions=" + std::to_string(cfg.max_positions));
        if (tok.text_class_id < 0 || tok.text_class_id >= cfg.n_text_classes)
            throw ShapeError("embed_text: text class id " + std::to_string(tok.text_class_id) +
                             " outside [0," + std::to_string(cfg.n_text_classes) + ")");
        bbox_flat.insert(bbox_flat.end(), tok.bbox4.begin(), tok.bbox4.end());
        word_ids.push_back(tok.token_id);
        pos_ids.push_back(tok.position_index);
        class_ids.push_back(tok.text_class_id);
    }
    const Tensor bbox_in = Tensor::from_vector({n, 4}, bbox_flat);
    Tensor out = add(embedding(params.at("embed.text.word"), word_ids),
                     embedding(params.at("embed.text.pos"), pos_ids));
    out = add(out, add(matmul(bbox_in, params.at("embed.text.bbox.w")),
                       params.at("embed.text.bbox.b")));
    if (!cfg.ablation.drop_text_class_emb)
        out = add(out, embedding(params.at("embed.text.class"), class_ids));
    return out;
}

StreamState embed_sample(const EncodedSample& sample, const ParamStore& params,
                         const ModelConfig& cfg) {
    StreamState state;
    state.h_v = embed_visual(sample.visual_seq, params, cfg);
    state.h_t = embed_text(sample.text_seq, params, cfg);
    return state;
}

StreamState co_attention_block(const StreamState& state, const ParamStore& params,
                               const ModelConfig& cfg, int block_index, AttnTrace* trace) {
    check_state(state, cfg);
    if (block_index < 0 || block_index >= cfg.n_blocks)
        throw ConfigError("block index " + std::to_string(block_index) + " outside [0," +
                          std::to_string(cfg.n_blocks) + ")");
    const std::string vc = block_prefix(block_index, "v", "co");
    const std::string tc = block_prefix(block_index, "t", "co");
    const std::string vs = block_prefix(block_index, "v", "self");
    const std::string ts = block_prefix(block_index, "t", "self");
    const std::string tag = "block" + std::to_string(block_index);
    // co-encoders: queries stay home, keys and values come from the other stream
    const Tensor zv = encoder_sublayer(state.h_v, state.h_t, params, vc, tc, state.t_mask, cfg,
                                       trace, tag + ".v.co");
    const Tensor zt = encoder_sublayer(state.h_t, state.h_v, params, tc, vc, state.v_mask, cfg,
                                       trace, tag + ".t.co");
    StreamState out;
    out.h_v = encoder_sublayer(zv, zv, params, vs, vs, state.v_mask, cfg, trace, tag + ".v.self");
    out.h_t = encoder_sublayer(zt, zt, params, ts, ts, state.t_mask, cfg, trace, tag + ".t.self");
    out.v_mask = state.v_mask;
    out.t_mask = state.t_mask;
    return out;
}

StreamState run_blocks(StreamState state, const ParamStore& params, const ModelConfig& cfg,
                       AttnTrace* trace) {
    check_state(state, cfg);
    for (int b = 0; b < cfg.n_blocks; ++b) state = co_attention_block(state, params, cfg, b, trace);
    return state;
}

PooledPair pool(const StreamState& state) {
    PooledPair pair;
    pair.h_v0 = slice(state.h_v, 0, 0, 1);
    pair.h_w0 = slice(state.h_t, 0, 0, 1);
    return pair;
}

PooledPair encode(const EncodedSample& sample, const ParamStore& params, const ModelConfig& cfg,
                  AttnTrace* trace) {
    return pool(run_blocks(embed_sample(sample, params, cfg), params, cfg, trace));
}

HeadOutputs heads(const PooledPair& pair, const ParamStore& params, const ModelConfig& cfg) {
    if (pair.h_v0.ndim() != 2 || pair.h_v0.dim(0) != 1 || pair.h_v0.dim(1) != cfg.d_model ||
        pair.h_w0.ndim() != 2 || pair.h_w0.dim(0) != 1 || pair.h_w0.dim(1) != cfg.d_model)
        throw ShapeError("heads: pooled vectors must be 1 x d_model");
    HeadOutputs out;
    const Tensor fused = mul(pair.h_w0, pair.h_v0);
    const Tensor c1 = gelu(add(matmul(fused, params.at("head.cls.w1")), params.at("head.cls.b1")));
    out.align_logit =
        reshape(add(matmul(c1, params.at("head.cls.w2")), params.at("head.cls.b2")), {1});
    out.align_score = sigmoid(out.align_logit);
    const Tensor joint = concat({pair.h_w0, pair.h_v0}, 1);
    const Tensor r1 = gelu(add(matmul(joint, params.at("head.reg.w1")), params.at("head.reg.b1")));
    out.reg_value =
        reshape(add(matmul(r1, params.at("head.reg.w2")), params.at("head.reg.b2")), {1});
    return out;
}

Tensor combined_loss(const HeadOutputs& out, int target_c, std::optional<double> target_r,
                     bool is_reg, double lambda1, double lambda2) {
    if (target_c != 0 && target_c != 1)
        throw DataError("alignment target must be 0 or 1, got " + std::to_string(target_c));
    if (lambda1 < 0.0 || lambda2 < 0.0) throw ConfigError("loss weights must be non-negative");
    if (is_reg && !target_r.has_value())
        throw DataError("regression sample is missing its numeric target");
    Tensor loss = scale(bce_with_logits(out.align_logit, static_cast<double>(target_c)), lambda1);
    // the regression term exists in the graph only for aligned numeric samples,
    // so mismatched candidates contribute no regression gradient at all
    if (is_reg && target_c == 1) {
        const Tensor l1 = abs(sub(out.reg_value, Tensor::scalar(*target_r)));
        loss = add(loss, scale(l1, lambda2));
    }
    return loss;
}

void write_checkpoint(const std::string& path, const ModelConfig& cfg, const ParamStore& params,
                      const Adam* adam) {
    validate(cfg);
    require_little_endian();
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot open checkpoint for writing: " + path);
    f.write(kCkptMagic, sizeof(kCkptMagic));
    write_raw<std::uint32_t>(f, kCkptVersion);
    write_str(f, to_json(cfg).dump());
    const std::vector<std::string> names = params.names();
    write_raw<std::uint64_t>(f, names.size());
    for (const std::string& name : names) {
        const Tensor& t = params.at(name);
        write_str(f, name);
        write_raw<std::uint32_t>(f, static_cast<std::uint32_t>(t.ndim()));
        for (int a = 0; a < t.ndim(); ++a) write_raw<std::int32_t>(f, t.dim(a));
        const Eigen::ArrayXd& v = t.value();
        f.write(reinterpret_cast<const char*>(v.data()),
                static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(v.size())));
    }
    write_raw<std::uint8_t>(f, adam ? 1 : 0);
    if (adam) {
        if (adam->moment1().size() != names.size())
            throw Error("optimizer state does not cover the parameter set");
        write_raw<std::int64_t>(f, adam->step_count());
        write_raw<double>(f, adam->lr());
        write_raw<double>(f, adam->beta1());
        write_raw<double>(f, adam->beta2());
        write_raw<double>(f, adam->epsilon());
        for (std::size_t i = 0; i < names.size(); ++i) {
            const Eigen::ArrayXd& m = adam->moment1()[i];
            const Eigen::ArrayXd& v = adam->moment2()[i];
            if (m.size() != params.at(names[i]).numel())
                throw Error("optimizer moment size mismatch for " + names[i]);
            write_str(f, names[i]);
            write_raw<std::uint64_t>(f, static_cast<std::uint64_t>(m.size()));
            f.write(reinterpret_cast<const char*>(m.data()),
                    static_cast<std::streamsize>(sizeof(double) *
                                                 static_cast<std::size_t>(m.size())));
            f.write(reinterpret_cast<const char*>(v.data()),
                    static_cast<std::streamsize>(sizeof(double) *
                                                 static_cast<std::size_t>(v.size())));
        }
    }
    f.flush();
    if (!f) throw Error("failed while writing checkpoint: " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
    require_little_endian();
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open checkpoint: " + path);
    char magic[8];
    f.read(magic, sizeof(magic));
    if (!f || std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0)
        throw DataError("not a checkpoint file: " + path);
    const auto version = read_raw<std::uint32_t>(f);
    if (version != kCkptVersion)
        throw DataError("unsupported checkpoint version " + std::to_string(version));
    Checkpoint ckpt;
    Json cfg_json;
    try {
        cfg_json = Json::parse(read_str(f));
    } catch (const Json::parse_error& e) {
        throw DataError(std::string("checkpoint config is not valid JSON: ") + e.what());
    }
    ckpt.cfg = model_config_from_json(cfg_json);
    const auto n_tensors = read_raw<std::uint64_t>(f);
    NoGradGuard guard;
    for (std::uint64_t i = 0; i < n_tensors; ++i) {
        const std::string name = read_str(f);
        const auto ndim = read_raw<std::uint32_t>(f);
        if (ndim > 4) throw DataError("checkpoint tensor rank is implausible");
        std::vector<int> shape;
        std::int64_t numel = 1;
        for (std::uint32_t a = 0; a < ndim; ++a) {
            const auto d = read_raw<std::int32_t>(f);
            if (d < 1 || numel > (1 << 28) / d) throw DataError("checkpoint tensor shape invalid");
            shape.push_back(d);
            numel *= d;
        }
        std::vector<double> values(static_cast<std::size_t>(numel));
        f.read(reinterpret_cast<char*>(values.data()),
               static_cast<std::streamsize>(sizeof(double) * values.size()));
        if (!f) throw DataError("truncated checkpoint");
        if (ckpt.tensors.count(name)) throw DataError("duplicate checkpoint tensor: " + name);
        ckpt.tensors.emplace(name, Tensor::from_vector(shape, values));
    }
    const auto has_adam = read_raw<std::uint8_t>(f);
    if (has_adam) {
        ckpt.has_adam = true;
        ckpt.adam_step = read_raw<std::int64_t>(f);
        ckpt.adam_lr = read_raw<double>(f);
        ckpt.adam_beta1 = read_raw<double>(f);
        ckpt.adam_beta2 = read_raw<double>(f);
        ckpt.adam_eps = read_raw<double>(f);
        for (std::uint64_t i = 0; i < n_tensors; ++i) {
            const std::string name = read_str(f);
            const auto numel = read_raw<std::uint64_t>(f);
            if (numel > (1u << 28)) throw DataError("checkpoint moment size is implausible");
            Eigen::ArrayXd m(static_cast<Eigen::Index>(numel));
            Eigen::ArrayXd v(static_cast<Eigen::Index>(numel));
            f.read(reinterpret_cast<char*>(m.data()),
                   static_cast<std::streamsize>(sizeof(double) * numel));
            f.read(reinterpret_cast<char*>(v.data()),
                   static_cast<std::streamsize>(sizeof(double) * numel));
            if (!f) throw DataError("truncated checkpoint");
            ckpt.adam_moments.emplace(name, std::make_pair(std::move(m), std::move(v)));
        }
    }
    return ckpt;
}

ParamStore params_from_checkpoint(const Checkpoint& ckpt, const ModelConfig& expected) {
    validate(expected);
    if (!(ckpt.cfg == expected))
        throw ConfigError("checkpoint model config does not match the requested config");
    const std::vector<ParamSpec> specs = param_specs(expected);
    if (ckpt.tensors.size() != specs.size())
        throw DataError("checkpoint holds " + std::to_string(ckpt.tensors.size()) +
                        " tensors, expected " + std::to_string(specs.size()));
    ParamStore store;
    for (const ParamSpec& spec : specs) {
        const auto it = ckpt.tensors.find(spec.name);
        if (it == ckpt.tensors.end()) throw DataError("checkpoint is missing " + spec.name);
        const Tensor& src = it->second;
        if (src.shape() != spec.shape)
            throw DataError("checkpoint tensor " + spec.name + " has shape " +
                            shape_text(src.shape()) + ", expected " + shape_text(spec.shape));
        Tensor t = Tensor::zeros(spec.shape, true);
        t.raw() = src.value();
        store.create(spec.name, std::move(t));
    }
    return store;
}

}  // namespace crct
