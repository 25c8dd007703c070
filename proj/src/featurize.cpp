#include "crct/featurize.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <sstream>

#include "crct/io.hpp"

namespace crct {

double iou(const BBox& a, const BBox& b) {
    const double ix = std::max(0.0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
    const double iy = std::max(0.0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
    const double inter = ix * iy;
    const double uni = a.area() + b.area() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

std::vector<Detection> oracle_detect(const ElementSet& gt, const JitterConfig& noise,
                                     std::uint64_t seed) {
    if (noise.sigma < 0.0) throw ConfigError("jitter sigma must be non-negative");
    if (noise.drop_prob < 0.0 || noise.drop_prob > 1.0)
        throw ConfigError("drop probability must lie in [0,1]");

    Rng rng(derive_seed(seed, 0xDE7EC7));
    std::vector<Detection> dets;
    for (std::size_t i = 0; i < gt.elements.size(); ++i) {
        const Element& e = gt.elements[i];
        if (noise.drop_prob > 0.0 && rng.uniform() < noise.drop_prob) continue;

        BBox jittered = e.bbox;
        if (noise.sigma > 0.0) {
            jittered.x0 += rng.normal(0.0, noise.sigma);
            jittered.y0 += rng.normal(0.0, noise.sigma);
            jittered.x1 += rng.normal(0.0, noise.sigma);
            jittered.y1 += rng.normal(0.0, noise.sigma);
            if (jittered.x0 > jittered.x1) std::swap(jittered.x0, jittered.x1);
            if (jittered.y0 > jittered.y1) std::swap(jittered.y0, jittered.y1);
            jittered.x0 = std::clamp(jittered.x0, 0.0, 1.0);
            jittered.y0 = std::clamp(jittered.y0, 0.0, 1.0);
            jittered.x1 = std::clamp(jittered.x1, jittered.x0, 1.0);
            jittered.y1 = std::clamp(jittered.y1, jittered.y0, 1.0);
        }

        Detection d;
        d.element_class = e.element_class;
        d.bbox = jittered;
        d.text = e.text;
        d.color = e.color;
        d.iou_with_gt = iou(jittered, e.bbox);
        d.source_index = static_cast<int>(i);
        if (is_textual_class(e.element_class) && !(d.iou_with_gt > 0.5)) continue;
        d.feature_vector = handcrafted_feature(d.bbox, d.color, d.element_class);
        dets.push_back(std::move(d));
    }
    return dets;
}

std::vector<double> handcrafted_feature(const BBox& bbox, const std::optional<Rgb>& color,
                                        ElementClass element_class) {
    std::vector<double> f;
    f.reserve(kDetFeatureDim);
    f.push_back(color ? color->r : 0.0);
    f.push_back(color ? color->g : 0.0);
    f.push_back(color ? color->b : 0.0);
    const double w = bbox.width();
    const double h = bbox.height();
    f.push_back(w);
    f.push_back(h);
    f.push_back(h > 0.0 ? w / h : 0.0);
    f.push_back(bbox.cx());
    f.push_back(bbox.cy());
    f.push_back(w + h > 0.0 ? h / (w + h) : 0.0);
    const double eps = 0.1;
    for (int c = 0; c < kNumElementClasses; ++c) {
        const double hot = c == static_cast<int>(element_class) ? 1.0 : 0.0;
        f.push_back(hot * (1.0 - eps) + eps / kNumElementClasses);
    }
    return f;
}

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> tokens;
    std::string cur;
    for (char ch : text) {
        if (std::isalnum(static_cast<unsigned char>(ch))) {
            cur += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        } else if (!cur.empty()) {
            tokens.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) tokens.push_back(cur);
    return tokens;
}

Vocab::Vocab() {
    for (const char* s : {kPadToken, kClsToken, kSepToken, kUnkToken, kRegToken}) add(s);
}

int Vocab::add(const std::string& token) {
    auto [it, fresh] = token_to_id_.emplace(token, size());
    if (fresh) id_to_token_.push_back(token);
    return it->second;
}

int Vocab::id(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnkId : it->second;
}

const std::string& Vocab::token(int id) const {
    if (id < 0 || id >= size()) throw DataError("token id out of range: " + std::to_string(id));
    return id_to_token_[static_cast<std::size_t>(id)];
}

bool Vocab::contains(const std::string& token) const { return token_to_id_.count(token) != 0; }

Vocab build_vocab(const std::vector<std::string>& corpus, int min_freq) {
    if (corpus.empty()) throw DataError("vocabulary corpus is empty");
    if (min_freq < 1) throw ConfigError("min_freq must be >= 1");
    std::map<std::string, std::int64_t> freq;
    for (const std::string& s : corpus)
        for (const std::string& t : tokenize(s)) freq[t]++;
    std::vector<std::pair<std::string, std::int64_t>> order(freq.begin(), freq.end());
    std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    Vocab v;
    for (const auto& [token, n] : order)
        if (n >= min_freq) v.add(token);
    return v;
}

void save_vocab(const std::string& path, const Vocab& vocab) {
    Json j;
    j["format_version"] = 1;
    std::vector<std::string> tokens;
    for (int i = 0; i < vocab.size(); ++i) tokens.push_back(vocab.token(i));
    j["tokens"] = std::move(tokens);
    write_text_file(path, j.dump() + "\n");
}

Vocab load_vocab(const std::string& path) {
    Json j;
    try {
        j = Json::parse(read_text_file(path));
    } catch (const std::exception& ex) {
        throw DataError(path + ": " + ex.what());
    }
    if (j.at("format_version").get<int>() != 1)
        throw DataError(path + ": unsupported format_version");
    const auto tokens = j.at("tokens").get<std::vector<std::string>>();
    Vocab v;
    if (tokens.size() < 5) throw DataError(path + ": vocabulary misses the special tokens");
    for (int i = 0; i < 5; ++i)
        if (tokens[static_cast<std::size_t>(i)] != v.token(i))
            throw DataError(path + ": special tokens out of order");
    for (std::size_t i = 5; i < tokens.size(); ++i) {
        if (v.contains(tokens[i])) throw DataError(path + ": duplicate token " + tokens[i]);
        v.add(tokens[i]);
    }
    return v;
}

namespace {

TextClass text_class_of(ElementClass c) {
    switch (c) {
        case ElementClass::title: return TextClass::title;
        case ElementClass::x_label: return TextClass::x_label;
        case ElementClass::y_label: return TextClass::y_label;
        case ElementClass::x_ticklabel: return TextClass::x_ticklabel;
        case ElementClass::y_ticklabel: return TextClass::y_ticklabel;
        case ElementClass::legend_label: return TextClass::legend_label;
        default: throw DataError("element class carries no text");
    }
}

}  // namespace

EncodedSample encode_sample(const ChartSpec& spec, const std::vector<Detection>& dets,
                            const std::string& question, const std::string& answer,
                            const Vocab& vocab, const EncodeOptions& opts) {
    (void)spec;
    if (opts.max_visual < 1 || opts.max_text < 2) throw ConfigError("sequence limits too small");

    EncodedSample out;
    VisualToken global;
    global.bbox4 = {0.0, 0.0, 1.0, 1.0};
    global.class_id = kGlobalVisualClass;
    global.det_feature.assign(kDetFeatureDim, 0.0);
    out.visual_seq.push_back(std::move(global));

    int text_pos = 0;
    auto push_text = [&](int token_id, const std::array<double, 4>& bbox4, TextClass cls) {
        TextToken t;
        t.token_id = token_id;
        t.position_index = text_pos++;
        t.bbox4 = bbox4;
        t.text_class_id = static_cast<int>(cls);
        out.text_seq.push_back(std::move(t));
    };
    const std::array<double, 4> zero4{};
    push_text(kClsId, zero4, TextClass::separator);

    for (const Detection& d : dets) {
        if (is_textual_class(d.element_class)) {
            if (!d.text) throw DataError("textual detection without text");
            if (!(d.iou_with_gt > 0.5)) throw DataError("textual detection below the overlap filter");
            const std::array<double, 4> box{d.bbox.x0, d.bbox.y0, d.bbox.x1, d.bbox.y1};
            const TextClass cls = text_class_of(d.element_class);
            for (const std::string& tok : tokenize(*d.text)) push_text(vocab.id(tok), box, cls);
            push_text(kSepId, zero4, TextClass::separator);
        } else {
            if (opts.ablation.drop_legend_marker && d.element_class == ElementClass::legend_marker)
                continue;
            if (static_cast<int>(d.feature_vector.size()) != kDetFeatureDim)
                throw ShapeError("detection feature length " +
                                 std::to_string(d.feature_vector.size()) + ", expected " +
                                 std::to_string(kDetFeatureDim));
            VisualToken v;
            v.bbox4 = {d.bbox.x0, d.bbox.y0, d.bbox.x1, d.bbox.y1};
            v.class_id = static_cast<int>(d.element_class);
            v.det_feature = opts.ablation.visual_bbox_only ? std::vector<double>(kDetFeatureDim, 0.0)
                                                           : d.feature_vector;
            v.source_index = d.source_index;
            out.visual_seq.push_back(std::move(v));
        }
    }

    for (const std::string& tok : tokenize(question)) push_text(vocab.id(tok), zero4, TextClass::question);
    push_text(kSepId, zero4, TextClass::separator);

    if (answer == kRegToken) {
        push_text(kRegId, zero4, TextClass::answer);
        out.is_reg_target = true;
    } else {
        const auto toks = tokenize(answer);
        if (toks.empty()) throw DataError("empty answer string");
        for (const std::string& tok : toks) push_text(vocab.id(tok), zero4, TextClass::answer);
    }

    if (static_cast<int>(out.visual_seq.size()) > opts.max_visual)
        throw DataError("visual sequence length " + std::to_string(out.visual_seq.size()) +
                        " exceeds limit " + std::to_string(opts.max_visual));
    if (static_cast<int>(out.text_seq.size()) > opts.max_text)
        throw DataError("text sequence length " + std::to_string(out.text_seq.size()) +
                        " exceeds limit " + std::to_string(opts.max_text));
    return out;
}

}  // namespace crct
