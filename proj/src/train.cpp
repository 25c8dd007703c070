#include "crct/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <set>
#include <unordered_map>

#include "crct/common.hpp"

namespace crct {

namespace {

constexpr std::uint64_t kNegStream = 0x4E6A;
constexpr std::uint64_t kOrderStream = 0x0BA7;

struct ChartCache {
    const ChartRecord* rec = nullptr;
    std::vector<Detection> dets;
    std::vector<std::string> pool;  // candidate surfaces, regression flag included
    int base_text_tokens = 0;       // [CLS] plus chart tokens with separators
};

// one planned positive or negative alignment pair, encoded lazily at batch time
struct PlanEntry {
    std::size_t item_index = 0;
    std::string answer_surface;
    int class_target = 0;
    int text_len_estimate = 0;
};

std::vector<std::string> vocab_corpus(const std::vector<ChartRecord>& charts,
                                      const std::vector<QAItem>& items) {
    std::vector<std::string> corpus;
    for (const ChartRecord& rec : charts) {
        const ChartSpec& spec = rec.chart;
        corpus.push_back(spec.title);
        corpus.push_back(spec.x_label);
        corpus.push_back(spec.y_label);
        for (const std::string& c : spec.x_categories) corpus.push_back(c);
        for (const Series& s : spec.series) corpus.push_back(s.legend_label);
        for (const std::string& t : spec.y_axis.tick_labels) corpus.push_back(t);
    }
    for (const QAItem& item : items) {
        corpus.push_back(item.question_text);
        if (item.answer_text.has_value()) corpus.push_back(*item.answer_text);
    }
    for (const std::string& s : fixed_vocab_answers()) corpus.push_back(s);
    return corpus;
}

std::string metrics_row(const EpochStats& s) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g\n", s.epoch, s.mean_loss, s.align_acc,
                  s.last_lr);
    return buf;
}

std::string reg_checkpoint_path(const std::string& cls_path) {
    const std::string suffix = ".ckpt";
    if (cls_path.size() < suffix.size() ||
        cls_path.compare(cls_path.size() - suffix.size(), suffix.size(), suffix) != 0)
        return cls_path + ".reg";
    return cls_path.substr(0, cls_path.size() - suffix.size()) + ".reg.ckpt";
}

void pad_sample(EncodedSample& s, int n_v, int n_t, std::vector<unsigned char>& v_mask,
                std::vector<unsigned char>& t_mask, int d_det) {
    const int have_v = static_cast<int>(s.visual_seq.size());
    const int have_t = static_cast<int>(s.text_seq.size());
    if (have_v < n_v || have_t < n_t) {
        v_mask.assign(static_cast<std::size_t>(n_v), 0);
        t_mask.assign(static_cast<std::size_t>(n_t), 0);
        for (int i = have_v; i < n_v; ++i) {
            VisualToken pad;
            pad.det_feature.assign(static_cast<std::size_t>(d_det), 0.0);
            s.visual_seq.push_back(std::move(pad));
            v_mask[static_cast<std::size_t>(i)] = 1;
        }
        for (int i = have_t; i < n_t; ++i) {
            TextToken pad;
            pad.token_id = kPadId;
            pad.position_index = i;
            pad.text_class_id = static_cast<int>(TextClass::separator);
            s.text_seq.push_back(pad);
            t_mask[static_cast<std::size_t>(i)] = 1;
        }
    }
}

struct Pipeline {
    ParamStore params;
    std::vector<Tensor> param_vec;
    std::unique_ptr<Adam> adam;
};

Pipeline make_pipeline(const ModelConfig& cfg, std::uint64_t seed, const TrainConfig& tcfg) {
    Pipeline p;
    p.params = init_params(cfg, seed);
    p.param_vec = p.params.all();
    p.adam = std::make_unique<Adam>(p.param_vec, tcfg.base_lr, 0.9, 0.999, 1e-8);
    return p;
}

void restore_pipeline(Pipeline& p, const Checkpoint& ckpt, const ModelConfig& cfg,
                      double base_lr) {
    if (!ckpt.has_adam) throw DataError("checkpoint lacks optimizer state, cannot resume");
    p.params = params_from_checkpoint(ckpt, cfg);
    p.param_vec = p.params.all();
    // the stored lr can be 0 at the end of a schedule; every update re-sets the
    // rate before stepping, so seed the optimizer with the configured base rate
    p.adam = std::make_unique<Adam>(p.param_vec, base_lr, ckpt.adam_beta1, ckpt.adam_beta2,
                                    ckpt.adam_eps);
    const std::vector<std::string> names = p.params.names();
    std::vector<Eigen::ArrayXd> m, v;
    for (const std::string& name : names) {
        const auto it = ckpt.adam_moments.find(name);
        if (it == ckpt.adam_moments.end())
            throw DataError("checkpoint lacks optimizer moments for " + name);
        m.push_back(it->second.first);
        v.push_back(it->second.second);
    }
    p.adam->load_state(ckpt.adam_step, std::move(m), std::move(v));
}

}  // namespace

void validate(const TrainConfig& cfg) {
    if (cfg.epochs < 1) throw ConfigError("epochs must be at least 1");
    if (cfg.negatives_per_positive < 1)
        throw ConfigError("negatives_per_positive must be at least 1");
    if (cfg.base_lr <= 0.0) throw ConfigError("base_lr must be positive");
    if (cfg.warmup_fraction < 0.0 || cfg.warmup_fraction >= 1.0)
        throw ConfigError("warmup_fraction must lie in [0,1)");
    if (cfg.batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (cfg.clip_norm <= 0.0) throw ConfigError("clip_norm must be positive");
    if (cfg.jitter.sigma < 0.0 || cfg.jitter.drop_prob < 0.0 || cfg.jitter.drop_prob > 1.0)
        throw ConfigError("detector jitter settings are out of range");
}

std::vector<std::string> sample_negatives(const QAItem& item, const std::vector<std::string>& pool,
                                          int k, std::uint64_t seed) {
    if (k < 1) throw ConfigError("sample_negatives: k must be at least 1");
    std::string correct;
    if (item.answer_kind == AnswerKind::numeric) {
        correct = kRegToken;
    } else {
        if (!item.answer_text.has_value())
            throw DataError("qa item " + std::to_string(item.qa_id) + " lacks an answer text");
        correct = *item.answer_text;
    }
    const std::string correct_norm = normalize_answer(correct);
    std::vector<std::string> filtered;
    std::set<std::string> seen;
    for (const std::string& s : pool) {
        const std::string key = normalize_answer(s);
        if (key == correct_norm) continue;
        if (seen.insert(key).second) filtered.push_back(s);
    }
    if (static_cast<int>(filtered.size()) < k)
        throw DataError("negative pool for qa item " + std::to_string(item.qa_id) + " has " +
                        std::to_string(filtered.size()) + " usable answers, need " +
                        std::to_string(k));
    Rng rng(derive_seed(seed, kNegStream));
    rng.shuffle(filtered);
    filtered.resize(static_cast<std::size_t>(k));
    return filtered;
}

double lr_at(std::int64_t step, std::int64_t total_steps, const TrainConfig& cfg) {
    if (total_steps <= 0) throw ConfigError("lr_at: total_steps must be positive");
    if (step < 0 || step > total_steps)
        throw ConfigError("lr_at: step " + std::to_string(step) + " outside [0," +
                          std::to_string(total_steps) + "]");
    const double warm = cfg.warmup_fraction * static_cast<double>(total_steps);
    if (static_cast<double>(step) < warm) return cfg.base_lr * static_cast<double>(step) / warm;
    return cfg.base_lr * static_cast<double>(total_steps - step) /
           (static_cast<double>(total_steps) - warm);
}

TrainResult train(const std::vector<ChartRecord>& charts, const std::vector<QAItem>& items,
                  const TrainConfig& cfg, ModelConfig model_cfg,
                  const std::string& resume_checkpoint) {
    validate(cfg);
    if (charts.empty()) throw DataError("train: no charts");
    if (items.empty()) throw DataError("train: no qa items");

    const Vocab vocab = build_vocab(vocab_corpus(charts, items), 1);
    model_cfg.vocab_size = vocab.size();
    model_cfg.ablation = cfg.ablation;
    validate(model_cfg);

    EncodeOptions encode_opts;
    encode_opts.ablation = cfg.ablation;
    if (model_cfg.max_positions < encode_opts.max_text)
        encode_opts.max_text = model_cfg.max_positions;

    std::unordered_map<std::int64_t, ChartCache> cache;
    for (const ChartRecord& rec : charts) {
        ChartCache c;
        c.rec = &rec;
        c.dets = oracle_detect(rec.elements, cfg.jitter,
                               detection_seed(cfg.seed, rec.chart.chart_id));
        for (const AnswerCandidate& cand : candidate_set(rec.chart, c.dets))
            c.pool.push_back(cand.surface);
        c.base_text_tokens = 1;
        for (const Detection& d : c.dets)
            if (is_textual_class(d.element_class) && d.text.has_value())
                c.base_text_tokens += static_cast<int>(tokenize(*d.text).size()) + 1;
        cache.emplace(rec.chart.chart_id, std::move(c));
    }
    for (const QAItem& item : items)
        if (cache.find(item.chart_id) == cache.end())
            throw DataError("qa item " + std::to_string(item.qa_id) +
                            " references unknown chart " + std::to_string(item.chart_id));

    const std::int64_t n_items = static_cast<std::int64_t>(items.size());
    const std::int64_t samples_per_epoch = n_items * (1 + cfg.negatives_per_positive);
    const std::int64_t steps_per_epoch =
        (samples_per_epoch + cfg.batch_size - 1) / cfg.batch_size;
    const std::int64_t total_steps = steps_per_epoch * cfg.epochs;

    Pipeline main_pipe = make_pipeline(model_cfg, cfg.seed, cfg);
    std::optional<Pipeline> reg_pipe;
    if (cfg.two_pipelines)
        reg_pipe = make_pipeline(model_cfg, derive_seed(cfg.seed, 0x2E9), cfg);

    int start_epoch = 0;  // completed epochs
    if (!resume_checkpoint.empty()) {
        const Checkpoint ckpt = read_checkpoint(resume_checkpoint);
        restore_pipeline(main_pipe, ckpt, model_cfg, cfg.base_lr);
        if (ckpt.adam_step % steps_per_epoch != 0)
            throw DataError("checkpoint step count " + std::to_string(ckpt.adam_step) +
                            " is not an epoch boundary for this dataset");
        start_epoch = static_cast<int>(ckpt.adam_step / steps_per_epoch);
        if (start_epoch >= cfg.epochs)
            throw ConfigError("checkpoint already covers " + std::to_string(start_epoch) +
                              " epochs, nothing to resume for epochs=" +
                              std::to_string(cfg.epochs));
        if (cfg.two_pipelines)
            restore_pipeline(*reg_pipe, read_checkpoint(reg_checkpoint_path(resume_checkpoint)),
                             model_cfg, cfg.base_lr);
    }

    const bool to_disk = !cfg.out_dir.empty();
    std::ofstream metrics;
    if (to_disk) {
        std::filesystem::create_directories(cfg.out_dir);
        save_vocab(cfg.out_dir + "/vocab.json", vocab);
        const std::string mpath = cfg.out_dir + "/metrics.csv";
        const bool fresh = !std::filesystem::exists(mpath) || start_epoch == 0;
        metrics.open(mpath, fresh ? std::ios::trunc : std::ios::app);
        if (!metrics) throw Error("cannot open metrics log: " + mpath);
        if (fresh) metrics << "epoch,mean_loss,align_acc,lr\n";
    }

    TrainResult result;
    result.last_checkpoint = resume_checkpoint;

    for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        // the plan for an epoch depends only on (seed, epoch, data)
        std::vector<PlanEntry> plan;
        plan.reserve(static_cast<std::size_t>(samples_per_epoch));
        for (std::size_t i = 0; i < items.size(); ++i) {
            const QAItem& item = items[i];
            const ChartCache& c = cache.at(item.chart_id);
            const int q_tokens = static_cast<int>(tokenize(item.question_text).size());
            const auto entry_len = [&](const std::string& surface) {
                const int a_tokens = surface == kRegToken
                                         ? 1
                                         : static_cast<int>(tokenize(surface).size());
                return c.base_text_tokens + q_tokens + 1 + a_tokens;
            };
            PlanEntry pos;
            pos.item_index = i;
            pos.answer_surface = item.answer_kind == AnswerKind::numeric
                                     ? std::string(kRegToken)
                                     : item.answer_text.value();
            pos.class_target = 1;
            pos.text_len_estimate = entry_len(pos.answer_surface);
            plan.push_back(std::move(pos));
            const std::uint64_t neg_seed =
                derive_seed(cfg.seed, kNegStream,
                            static_cast<std::uint64_t>(epoch) * static_cast<std::uint64_t>(n_items) +
                                i);
            for (std::string& neg :
                 sample_negatives(item, c.pool, cfg.negatives_per_positive, neg_seed)) {
                PlanEntry entry;
                entry.item_index = i;
                entry.class_target = 0;
                entry.text_len_estimate = entry_len(neg);
                entry.answer_surface = std::move(neg);
                plan.push_back(std::move(entry));
            }
        }

        Rng order_rng(derive_seed(cfg.seed, kOrderStream, static_cast<std::uint64_t>(epoch)));
        std::vector<std::size_t> order(plan.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        order_rng.shuffle(order);
        // similar text lengths share a batch; the shuffle above decides the rest
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return plan[a].text_len_estimate / 16 < plan[b].text_len_estimate / 16;
        });
        std::vector<std::vector<std::size_t>> batches;
        for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(cfg.batch_size))
            batches.emplace_back(
                order.begin() + static_cast<std::ptrdiff_t>(at),
                order.begin() +
                    static_cast<std::ptrdiff_t>(std::min(
                        order.size(), at + static_cast<std::size_t>(cfg.batch_size))));
        order_rng.shuffle(batches);

        double loss_sum = 0.0;
        std::int64_t seen = 0, align_hits = 0;
        double last_lr = 0.0;

        for (const std::vector<std::size_t>& batch_idx : batches) {
            Batch batch;
            int max_v = 0, max_t = 0;
            for (std::size_t pi : batch_idx) {
                const PlanEntry& entry = plan[pi];
                const QAItem& item = items[entry.item_index];
                const ChartCache& c = cache.at(item.chart_id);
                EncodedSample s;
                try {
                    s = encode_sample(c.rec->chart, c.dets, item.question_text,
                                      entry.answer_surface, vocab, encode_opts);
                } catch (const DataError& e) {
                    throw DataError("qa item " + std::to_string(item.qa_id) + ": " + e.what());
                }
                s.class_target = entry.class_target;
                if (s.is_reg_target && entry.class_target == 1)
                    s.reg_target = normalize_value(item.answer_value.value(),
                                                   c.rec->chart.y_axis);
                max_v = std::max(max_v, static_cast<int>(s.visual_seq.size()));
                max_t = std::max(max_t, static_cast<int>(s.text_seq.size()));
                batch.samples.push_back(std::move(s));
                batch.qa_ids.push_back(item.qa_id);
            }
            batch.v_masks.resize(batch.samples.size());
            batch.t_masks.resize(batch.samples.size());
            for (std::size_t i = 0; i < batch.samples.size(); ++i)
                pad_sample(batch.samples[i], max_v, max_t, batch.v_masks[i], batch.t_masks[i],
                           model_cfg.d_det);

            Tensor total;
            Tensor reg_total;
            std::int64_t reg_count = 0;
            for (std::size_t i = 0; i < batch.samples.size(); ++i) {
                const EncodedSample& s = batch.samples[i];
                StreamState st = embed_sample(s, main_pipe.params, model_cfg);
                st.v_mask = batch.v_masks[i];
                st.t_mask = batch.t_masks[i];
                const HeadOutputs ho =
                    heads(pool(run_blocks(std::move(st), main_pipe.params, model_cfg)),
                          main_pipe.params, model_cfg);
                const bool is_reg = s.is_reg_target && s.class_target == 1;
                const bool split = cfg.two_pipelines;
                Tensor li = combined_loss(
                    ho, s.class_target,
                    (!split && is_reg) ? std::optional<double>(s.reg_target) : std::nullopt,
                    !split && is_reg, model_cfg.lambda1, model_cfg.lambda2);
                total = total.defined() ? add(total, li) : li;
                const bool said_yes = ho.align_score.item() > 0.5;
                if (said_yes == (s.class_target == 1)) ++align_hits;
                if (split && is_reg) {
                    StreamState rst = embed_sample(s, reg_pipe->params, model_cfg);
                    rst.v_mask = batch.v_masks[i];
                    rst.t_mask = batch.t_masks[i];
                    const HeadOutputs rho =
                        heads(pool(run_blocks(std::move(rst), reg_pipe->params, model_cfg)),
                              reg_pipe->params, model_cfg);
                    const Tensor rl = scale(
                        abs(sub(rho.reg_value, Tensor::scalar(s.reg_target))),
                        model_cfg.lambda2);
                    reg_total = reg_total.defined() ? add(reg_total, rl) : rl;
                    ++reg_count;
                }
            }
            const Tensor mean_loss =
                scale(total, 1.0 / static_cast<double>(batch.samples.size()));
            const double loss_value = mean_loss.item();
            if (!std::isfinite(loss_value)) {
                std::string ids;
                for (std::int64_t id : batch.qa_ids) ids += std::to_string(id) + " ";
                throw NumericalError("non-finite loss at epoch " + std::to_string(epoch + 1) +
                                     " step " + std::to_string(main_pipe.adam->step_count()) +
                                     ", qa ids: " + ids);
            }
            const double lr =
                lr_at(main_pipe.adam->step_count() + 1, total_steps, cfg);
            Tensor ml = mean_loss;
            ml.backward();
            clip_grad_norm(main_pipe.param_vec, cfg.clip_norm);
            for (Tensor& p : main_pipe.param_vec) p.ensure_grad();
            main_pipe.adam->set_lr(lr);
            main_pipe.adam->step();
            last_lr = lr;
            loss_sum += loss_value * static_cast<double>(batch.samples.size());
            seen += static_cast<std::int64_t>(batch.samples.size());

            if (reg_pipe.has_value() && reg_count > 0) {
                Tensor reg_mean = scale(reg_total, 1.0 / static_cast<double>(reg_count));
                if (!std::isfinite(reg_mean.item()))
                    throw NumericalError("non-finite regression loss at epoch " +
                                         std::to_string(epoch + 1));
                reg_mean.backward();
                clip_grad_norm(reg_pipe->param_vec, cfg.clip_norm);
                for (Tensor& p : reg_pipe->param_vec) p.ensure_grad();
                reg_pipe->adam->set_lr(lr);
                reg_pipe->adam->step();
            }
        }

        EpochStats stats;
        stats.epoch = epoch + 1;
        stats.mean_loss = loss_sum / static_cast<double>(seen);
        stats.align_acc = static_cast<double>(align_hits) / static_cast<double>(seen);
        stats.last_lr = last_lr;
        result.history.push_back(stats);

        if (to_disk) {
            metrics << metrics_row(stats);
            metrics.flush();
            const std::string ckpt_path =
                cfg.out_dir + "/epoch_" + std::to_string(epoch + 1) + ".ckpt";
            write_checkpoint(ckpt_path, model_cfg, main_pipe.params, main_pipe.adam.get());
            if (reg_pipe.has_value())
                write_checkpoint(reg_checkpoint_path(ckpt_path), model_cfg, reg_pipe->params,
                                 reg_pipe->adam.get());
            std::ofstream latest(cfg.out_dir + "/latest", std::ios::trunc);
            latest << "epoch_" << (epoch + 1) << ".ckpt\n";
            if (!latest) throw Error("cannot update the latest-checkpoint pointer");
            result.last_checkpoint = ckpt_path;
        }
    }

    result.model_cfg = model_cfg;
    result.params = std::move(main_pipe.params);
    if (reg_pipe.has_value()) result.reg_params = std::move(reg_pipe->params);
    result.vocab = vocab;
    return result;
}

Scorer make_scorer(const TrainResult& result) {
    Scorer scorer;
    scorer.cfg = result.model_cfg;
    scorer.params = result.params;
    scorer.vocab = result.vocab;
    scorer.encode_opts.ablation = result.model_cfg.ablation;
    if (result.model_cfg.max_positions < scorer.encode_opts.max_text)
        scorer.encode_opts.max_text = result.model_cfg.max_positions;
    if (result.reg_params.has_value()) {
        scorer.reg_params = result.reg_params;
        scorer.reg_cfg = result.model_cfg;
    }
    return scorer;
}

Scorer load_scorer(const std::string& model_dir, const std::string& checkpoint) {
    std::string name = checkpoint.empty() ? std::string("latest") : checkpoint;
    if (name == "latest") {
        std::string pointer = read_text_file(model_dir + "/latest");
        while (!pointer.empty() && (pointer.back() == '\n' || pointer.back() == '\r'))
            pointer.pop_back();
        if (pointer.empty()) throw DataError("empty latest pointer in " + model_dir);
        name = pointer;
    }
    const std::string path = model_dir + "/" + name;
    const Checkpoint ckpt = read_checkpoint(path);

    Scorer scorer;
    scorer.cfg = ckpt.cfg;
    scorer.params = params_from_checkpoint(ckpt, ckpt.cfg);
    scorer.vocab = load_vocab(model_dir + "/vocab.json");
    if (scorer.vocab.size() != scorer.cfg.vocab_size)
        throw DataError("vocab size " + std::to_string(scorer.vocab.size()) + " in " + model_dir +
                        "/vocab.json does not match checkpoint vocab_size " +
                        std::to_string(scorer.cfg.vocab_size));
    scorer.encode_opts.ablation = scorer.cfg.ablation;
    if (scorer.cfg.max_positions < scorer.encode_opts.max_text)
        scorer.encode_opts.max_text = scorer.cfg.max_positions;

    const std::string reg_path = reg_checkpoint_path(path);
    if (std::filesystem::exists(reg_path)) {
        const Checkpoint reg_ckpt = read_checkpoint(reg_path);
        scorer.reg_params = params_from_checkpoint(reg_ckpt, reg_ckpt.cfg);
        scorer.reg_cfg = reg_ckpt.cfg;
    }
    return scorer;
}

}  // namespace crct
