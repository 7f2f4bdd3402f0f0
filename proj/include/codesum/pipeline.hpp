#pragma once

// Orchestration: pipeline configuration, the three-phase driver, inference,
// evaluation, retrieval diagnostics, and the ablation harness.
//
// All randomness flows from one root seed expanded per phase, so ablation
// arms share data order.  Reports embed the semantic configuration and its
// hash but never filesystem paths, keeping identical runs byte-identical.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "codesum/checkpoint.hpp"
#include "codesum/contrastive.hpp"
#include "codesum/finetune.hpp"
#include "codesum/metrics.hpp"
#include "codesum/refine.hpp"

namespace codesum {

struct PipelineConfig {
    // data (environment; excluded from the config hash)
    std::string corpus_path;
    std::string schema;
    std::string out_dir;
    bool dedup = true;
    std::size_t min_frequency = 1;

    // model
    TransformerConfig model;

    // phase hyperparameters
    std::size_t epochs_pretrain = 1;
    std::size_t epochs_finetune = 10;
    std::size_t epochs_refine = 5;
    std::size_t batch_size = 24;
    double lr_pretrain = 5e-5;
    double lr_finetune = 5e-5;
    double lr_refine = 1e-5;
    double tau = 0.2;
    std::size_t k = 4;       // retrieved exemplars per query
    std::size_t refine_K = 5;  // candidates per query
    double refine_temperature = 0.8;
    double clip_norm = 1.0;

    // switches
    bool skip_pretrain = false;
    bool skip_refine = false;
    bool use_retrieval = true;
    bool weight_by_similarity = true;
    bool nu_floor = true;
    bool nu_live_gradient = false;
    bool mix_gold = false;
    bool negatives_second_view = false;
    bool independent_retriever = false;  // freeze the phase-1 encoder for retrieval

    std::uint64_t seed = 42;

    void validate() const {
        if (corpus_path.empty()) throw config_error("config: corpus path is required");
        if (!std::filesystem::exists(corpus_path))
            throw config_error("config: corpus path does not exist: " + corpus_path);
        if (tau <= 0.0) throw config_error("config: tau must be positive");
        if (lr_pretrain <= 0.0 || lr_finetune <= 0.0 || lr_refine <= 0.0)
            throw config_error("config: learning rates must be positive");
        if (k < 1) throw config_error("config: k must be at least 1");
        if (refine_K < 1) throw config_error("config: refine candidates K must be at least 1");
        if (batch_size < 1) throw config_error("config: batch size must be positive");
        if (independent_retriever && skip_pretrain)
            throw config_error("config: independent retriever requires the pretraining phase");
        if (independent_retriever && weight_by_similarity)
            throw config_error(
                "config: independent retriever implies unweighted generation loss "
                "(set weight_by_similarity=false)");
        if (!use_retrieval && !skip_refine)
            throw config_error(
                "config: self-refinement candidates use the retrieval-augmented input; "
                "set skip_refine=true when retrieval is off");
        TransformerConfig m = model;
        m.vocab_size = m.vocab_size ? m.vocab_size : 1;  // filled after vocab build
        m.validate();
    }

    // semantic fields only; paths are environment
    nlohmann::json to_json() const {
        nlohmann::json j;
        j["model"] = detail::config_to_json(model);
        j["dedup"] = dedup;
        j["min_frequency"] = min_frequency;
        j["epochs_pretrain"] = epochs_pretrain;
        j["epochs_finetune"] = epochs_finetune;
        j["epochs_refine"] = epochs_refine;
        j["batch_size"] = batch_size;
        j["lr_pretrain"] = lr_pretrain;
        j["lr_finetune"] = lr_finetune;
        j["lr_refine"] = lr_refine;
        j["tau"] = tau;
        j["k"] = k;
        j["refine_K"] = refine_K;
        j["refine_temperature"] = refine_temperature;
        j["clip_norm"] = clip_norm;
        j["skip_pretrain"] = skip_pretrain;
        j["skip_refine"] = skip_refine;
        j["use_retrieval"] = use_retrieval;
        j["weight_by_similarity"] = weight_by_similarity;
        j["nu_floor"] = nu_floor;
        j["nu_live_gradient"] = nu_live_gradient;
        j["mix_gold"] = mix_gold;
        j["negatives_second_view"] = negatives_second_view;
        j["independent_retriever"] = independent_retriever;
        j["seed"] = seed;
        j["schema"] = schema;
        return j;
    }

    std::uint64_t config_hash() const { return fnv1a64(to_json().dump()); }
};

// ----------------------------- key=value config files -----------------------------

namespace detail {

inline bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "off" || v == "no") return false;
    throw config_error("config: bad boolean for '" + key + "': " + v);
}

template <class T>
T parse_number(const std::string& v, const std::string& key) {
    try {
        if constexpr (std::is_floating_point_v<T>) return static_cast<T>(std::stod(v));
        else return static_cast<T>(std::stoull(v));
    } catch (const std::exception&) {
        throw config_error("config: bad number for '" + key + "': " + v);
    }
}

}  // namespace detail

// Applies one key=value setting; shared by config files and CLI overrides.
inline void apply_config_entry(PipelineConfig& cfg, const std::string& key,
                               const std::string& value) {
    using detail::parse_bool;
    using detail::parse_number;
    if (key == "corpus") cfg.corpus_path = value;
    else if (key == "out_dir") cfg.out_dir = value;
    else if (key == "schema") cfg.schema = value;
    else if (key == "dedup") cfg.dedup = parse_bool(value, key);
    else if (key == "min_frequency") cfg.min_frequency = parse_number<std::size_t>(value, key);
    else if (key == "d_model") cfg.model.d_model = parse_number<std::size_t>(value, key);
    else if (key == "n_heads") cfg.model.n_heads = parse_number<std::size_t>(value, key);
    else if (key == "n_enc_layers") cfg.model.n_enc_layers = parse_number<std::size_t>(value, key);
    else if (key == "n_dec_layers") cfg.model.n_dec_layers = parse_number<std::size_t>(value, key);
    else if (key == "ff_dim") cfg.model.ff_dim = parse_number<std::size_t>(value, key);
    else if (key == "max_src_len") cfg.model.max_src_len = parse_number<std::size_t>(value, key);
    else if (key == "max_tgt_len") cfg.model.max_tgt_len = parse_number<std::size_t>(value, key);
    else if (key == "dropout") cfg.model.dropout_p = parse_number<double>(value, key);
    else if (key == "epochs_pretrain") cfg.epochs_pretrain = parse_number<std::size_t>(value, key);
    else if (key == "epochs_finetune") cfg.epochs_finetune = parse_number<std::size_t>(value, key);
    else if (key == "epochs_refine") cfg.epochs_refine = parse_number<std::size_t>(value, key);
    else if (key == "batch_size") cfg.batch_size = parse_number<std::size_t>(value, key);
    else if (key == "lr_pretrain") cfg.lr_pretrain = parse_number<double>(value, key);
    else if (key == "lr_finetune") cfg.lr_finetune = parse_number<double>(value, key);
    else if (key == "lr_refine") cfg.lr_refine = parse_number<double>(value, key);
    else if (key == "tau") cfg.tau = parse_number<double>(value, key);
    else if (key == "k") cfg.k = parse_number<std::size_t>(value, key);
    else if (key == "refine_K") cfg.refine_K = parse_number<std::size_t>(value, key);
    else if (key == "refine_temperature") cfg.refine_temperature = parse_number<double>(value, key);
    else if (key == "clip_norm") cfg.clip_norm = parse_number<double>(value, key);
    else if (key == "skip_pretrain") cfg.skip_pretrain = parse_bool(value, key);
    else if (key == "skip_refine") cfg.skip_refine = parse_bool(value, key);
    else if (key == "use_retrieval") cfg.use_retrieval = parse_bool(value, key);
    else if (key == "weight_by_similarity") cfg.weight_by_similarity = parse_bool(value, key);
    else if (key == "nu_floor") cfg.nu_floor = parse_bool(value, key);
    else if (key == "nu_live_gradient") cfg.nu_live_gradient = parse_bool(value, key);
    else if (key == "mix_gold") cfg.mix_gold = parse_bool(value, key);
    else if (key == "negatives_second_view") cfg.negatives_second_view = parse_bool(value, key);
    else if (key == "independent_retriever") cfg.independent_retriever = parse_bool(value, key);
    else if (key == "seed") cfg.seed = parse_number<std::uint64_t>(value, key);
    else throw config_error("config: unknown key '" + key + "'");
}

// "key = value" lines, '#' comments; applied over the given defaults.
inline void load_config_file(PipelineConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open config file: " + path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const std::string trimmed = detail::trim(line);
        if (trimmed.empty()) continue;
        const std::size_t eq = trimmed.find('=');
        if (eq == std::string::npos)
            throw config_error(path + ":" + std::to_string(line_no) + ": expected key = value");
        const std::string key = detail::trim(trimmed.substr(0, eq));
        const std::string value = detail::trim(trimmed.substr(eq + 1));
        apply_config_entry(cfg, key, value);
    }
}

// ----------------------------- output directory lock -----------------------------

class RunLock {
public:
    explicit RunLock(const std::filesystem::path& dir) : path_(dir / "run.lock") {
        std::error_code ec;
        std::filesystem::create_directories(dir, ec);
        if (std::filesystem::exists(path_))
            throw config_error("output directory is locked by another run (stale lock?): " +
                               path_.string());
        std::ofstream out(path_);
        out << "locked\n";
        if (!out) throw data_error("cannot create lock file: " + path_.string());
    }
    ~RunLock() {
        std::error_code ec;
        std::filesystem::remove(path_, ec);
    }
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

private:
    std::filesystem::path path_;
};

// ----------------------------- inference -----------------------------

// Top-1 exemplar concatenation and greedy decode.  The query's own pair is
// excluded only when its id is known and present in the index.
inline std::string infer_comment(const Transformer& model, const Vocabulary& vocab,
                                 const EmbeddingIndex& index, const Corpus& corpus,
                                 const std::string& query_code,
                                 const std::optional<std::string>& query_id = std::nullopt,
                                 const Transformer* retriever = nullptr) {
    if (index.size() == 0) throw data_error("infer: empty index");
    CodeCommentPair probe;
    probe.id = query_id.value_or("");
    probe.code = query_code;
    probe.comment = "-";
    AugmentedInput input = inference_input(model, vocab, probe, index, corpus, retriever);
    TokenSequence out = generate(model, input.tokens);
    return join_tokens(detokenize(out, vocab));
}

// ----------------------------- retrieval diagnostics -----------------------------

struct RetrievalEvalRow {
    std::string query_id;
    std::string retrieved_id;
    double score = 0.0;
    double retrieved_comment_rouge = 0.0;  // vs the query's own reference
};

inline std::vector<RetrievalEvalRow> evaluate_retrieval(const Transformer& model,
                                                        const Vocabulary& vocab,
                                                        const EmbeddingIndex& index,
                                                        const Corpus& corpus, Split split) {
    NoGradGuard ng;
    std::vector<RetrievalEvalRow> rows;
    for (std::size_t i : corpus.split_indices(split)) {
        const auto& pair = corpus.at(i);
        Tensor q = embed_code_normalized(model, vocab, pair.code);
        const bool self_known = index.row_of(pair.id).has_value();
        auto hits = index.top_k(q.values(), 1,
                                self_known ? std::optional<std::string>(pair.id) : std::nullopt);
        RetrievalEvalRow row;
        row.query_id = pair.id;
        row.retrieved_id = hits[0].pair_id;
        row.score = hits[0].score;
        row.retrieved_comment_rouge =
            rouge_l(eval_tokenize(reference_surface(corpus.by_id(hits[0].pair_id))),
                    eval_tokenize(reference_surface(pair)));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline nlohmann::json retrieval_summary(std::vector<RetrievalEvalRow> rows) {
    nlohmann::json j;
    j["count"] = rows.size();
    if (rows.empty()) return j;
    std::vector<double> scores;
    for (const auto& r : rows) scores.push_back(r.retrieved_comment_rouge);
    std::sort(scores.begin(), scores.end());
    auto quantile = [&](double q) {
        const double pos = q * static_cast<double>(scores.size() - 1);
        const std::size_t lo = static_cast<std::size_t>(pos);
        const std::size_t hi = std::min(lo + 1, scores.size() - 1);
        return scores[lo] + (pos - static_cast<double>(lo)) * (scores[hi] - scores[lo]);
    };
    double mean = 0.0;
    for (double s : scores) mean += s;
    j["rouge_l"]["mean"] = mean / static_cast<double>(scores.size());
    j["rouge_l"]["median"] = quantile(0.5);
    j["rouge_l"]["q1"] = quantile(0.25);
    j["rouge_l"]["q3"] = quantile(0.75);
    return j;
}

// ----------------------------- evaluation + reports -----------------------------

struct EvaluationOutput {
    MetricReport report;
    std::vector<std::string> ids;
    std::vector<std::string> hyps;
    std::vector<std::string> refs;
    double exact_match_rate = 0.0;
};

inline EvaluationOutput evaluate_split(const Transformer& model, const Vocabulary& vocab,
                                       const EmbeddingIndex& index, const Corpus& corpus,
                                       Split split, bool use_retrieval,
                                       const Transformer* retriever = nullptr) {
    EvaluationOutput out;
    std::size_t exact = 0;
    for (std::size_t i : corpus.split_indices(split)) {
        const auto& pair = corpus.at(i);
        std::string hyp;
        if (use_retrieval) {
            hyp = infer_comment(model, vocab, index, corpus, pair.code, pair.id, retriever);
        } else {
            TokenSequence src =
                tokenize(pair.code, vocab, model.config().max_src_len, TextKind::code);
            hyp = join_tokens(detokenize(generate(model, src), vocab));
        }
        const std::string ref = reference_surface(pair);
        exact += hyp == ref ? 1 : 0;
        out.ids.push_back(pair.id);
        out.hyps.push_back(std::move(hyp));
        out.refs.push_back(ref);
    }
    out.report = evaluate_texts(out.hyps, out.refs);
    out.exact_match_rate =
        out.ids.empty() ? 0.0 : static_cast<double>(exact) / static_cast<double>(out.ids.size());
    return out;
}

inline nlohmann::json metric_report_json(const MetricReport& rep) {
    nlohmann::json j;
    j["count"] = rep.count;
    j["corpus_bleu"] = rep.corpus_bleu_score;
    j["sentence_bleu_mean"] = rep.mean_sentence_bleu;
    j["rouge_l_mean"] = rep.mean_rouge_l;
    j["meteor_mean"] = rep.mean_meteor;
    j["cider"] = rep.cider_score;
    j["config"]["max_n"] = rep.max_n;
    j["config"]["rouge_beta"] = rep.rouge_beta;
    j["config"]["smoothing"] = rep.smoothing;
    j["config"]["cider_degenerate_idf"] = rep.cider_degenerate_idf;
    return j;
}

inline void write_text_lines(const std::string& path, const std::vector<std::string>& lines) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw data_error("cannot open file for writing: " + path);
    for (const auto& l : lines) out << l << "\n";
}

inline void write_per_example_csv(const std::string& path, const EvaluationOutput& eval) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw data_error("cannot open file for writing: " + path);
    out << "id,sentence_bleu,rouge_l,meteor,exact\n";
    char buf[64];
    for (std::size_t i = 0; i < eval.ids.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.10f,%.10f,%.10f", eval.report.sentence_bleu_scores[i],
                      eval.report.rouge_l_scores[i], eval.report.meteor_scores[i]);
        out << eval.ids[i] << ',' << buf << ',' << (eval.hyps[i] == eval.refs[i] ? 1 : 0) << "\n";
    }
}

// ----------------------------- pipeline driver -----------------------------

struct PipelineResult {
    std::uint64_t init_fingerprint = 0;
    std::uint64_t pretrain_fingerprint = 0;
    std::uint64_t finetune_fingerprint = 0;
    std::uint64_t refine_fingerprint = 0;
    std::string final_checkpoint_path;
    EvaluationOutput test_eval;
    CorpusLoadReport corpus_report;
};

// pretrain starts from init; finetune accepts init (pretraining skipped) or
// pretrain; refine strictly needs a phase-2 checkpoint.  Same-phase input is
// a resume.
inline void check_phase_transition(const std::string& parent, const std::string& target) {
    const bool ok = parent == target ||
                    (target == "pretrain" && parent == "init") ||
                    (target == "finetune" && (parent == "init" || parent == "pretrain")) ||
                    (target == "refine" && parent == "finetune");
    if (!ok)
        throw data_error("phase order violation: cannot run '" + target + "' from a '" + parent +
                         "' checkpoint");
}

// Executes phases 1..3 with per-phase checkpoints, then evaluates on the
// test split.  Each phase reloads the previous phase's file, so a composed
// run is bit-identical to running the phase commands separately.
inline PipelineResult run_pipeline(const PipelineConfig& cfg, std::ostream* log_stream = nullptr) {
    cfg.validate();
    if (cfg.out_dir.empty()) throw config_error("config: out_dir is required");
    const std::filesystem::path out(cfg.out_dir);
    RunLock lock(out);
    auto say = [&](const std::string& msg) {
        if (log_stream) (*log_stream) << msg << "\n";
    };

    PipelineResult result;
    CorpusLoadOptions load_opts;
    if (!cfg.schema.empty()) load_opts.schema = CorpusSchema::parse(cfg.schema);
    load_opts.dedup = cfg.dedup;
    Corpus corpus = Corpus::load(cfg.corpus_path, load_opts, &result.corpus_report);
    say("corpus: " + std::to_string(result.corpus_report.count(Split::train)) + " train / " +
        std::to_string(result.corpus_report.count(Split::valid)) + " valid / " +
        std::to_string(result.corpus_report.count(Split::test)) + " test");

    Vocabulary vocab = Vocabulary::build(corpus.pairs(), cfg.min_frequency);
    TransformerConfig mcfg = cfg.model;
    mcfg.vocab_size = vocab.size();

    // phase 0: deterministic initialization
    Transformer model(mcfg, derive_seed(cfg.seed, "model-init"));
    const std::string init_path = (out / "checkpoint_init.bin").string();
    result.init_fingerprint = save_checkpoint(init_path, model, vocab, "init", 0);
    std::uint64_t parent_fp = result.init_fingerprint;
    std::string parent_path = init_path;

    // phase 1: contrastive pretraining
    if (!cfg.skip_pretrain) {
        PretrainOptions popts;
        popts.epochs = cfg.epochs_pretrain;
        popts.batch_size = cfg.batch_size;
        popts.tau = cfg.tau;
        popts.lr = cfg.lr_pretrain;
        popts.clip_norm = cfg.clip_norm;
        popts.seed = derive_seed(cfg.seed, "phase-pretrain");
        popts.negatives_second_view = cfg.negatives_second_view;
        pretrain(model, vocab, corpus, popts, nullptr, [&](std::size_t e, double l) {
            say("pretrain epoch " + std::to_string(e) + " loss " + std::to_string(l));
        });
        const std::string path = (out / "checkpoint_pretrain.bin").string();
        result.pretrain_fingerprint = save_checkpoint(path, model, vocab, "pretrain", parent_fp);
        parent_fp = result.pretrain_fingerprint;
        parent_path = path;
    }

    // the frozen retriever for the independent arm is the phase-1 encoder
    std::optional<Checkpoint> frozen;
    if (cfg.independent_retriever) frozen.emplace(load_checkpoint(parent_path));
    const Transformer* retriever = frozen ? &frozen->model : nullptr;

    // phase 2: joint fine-tuning (reload the parent first)
    {
        Checkpoint parent = load_checkpoint(parent_path);
        check_phase_transition(parent.phase, "finetune");
        model.import_parameters(parent.model.export_parameters());
        FinetuneOptions fopts;
        fopts.k = cfg.k;
        fopts.epochs = cfg.epochs_finetune;
        fopts.batch_size = cfg.batch_size;
        fopts.lr = cfg.lr_finetune;
        fopts.clip_norm = cfg.clip_norm;
        fopts.seed = derive_seed(cfg.seed, "phase-finetune");
        fopts.use_retrieval = cfg.use_retrieval;
        fopts.weight_by_similarity = cfg.use_retrieval && cfg.weight_by_similarity;
        fopts.nu_floor = cfg.nu_floor;
        fopts.nu_live_gradient = cfg.nu_live_gradient;
        fopts.retrieval_encoder = retriever;
        const std::string path = (out / "checkpoint_finetune.bin").string();
        finetune(model, vocab, corpus, gold_training_examples(corpus), fopts, nullptr,
                 [&](std::size_t e, double l) {
                     say("finetune epoch " + std::to_string(e) + " loss " + std::to_string(l));
                     result.finetune_fingerprint =
                         save_checkpoint(path, model, vocab, "finetune", parent_fp);
                 });
        if (cfg.epochs_finetune == 0)
            result.finetune_fingerprint = save_checkpoint(path, model, vocab, "finetune", parent_fp);
        parent_fp = result.finetune_fingerprint;
        parent_path = path;
    }

    // phase 3: self-refinement
    if (!cfg.skip_refine) {
        Checkpoint parent = load_checkpoint(parent_path);
        check_phase_transition(parent.phase, "refine");
        model.import_parameters(parent.model.export_parameters());
        RefineOptions ropts;
        ropts.decode.K = cfg.refine_K;
        ropts.decode.temperature = cfg.refine_temperature;
        ropts.decode.seed = derive_seed(cfg.seed, "phase-refine-decode");
        ropts.epochs = cfg.epochs_refine;
        ropts.batch_size = cfg.batch_size;
        ropts.lr = cfg.lr_refine;
        ropts.clip_norm = cfg.clip_norm;
        ropts.k = cfg.k;
        ropts.seed = derive_seed(cfg.seed, "phase-refine");
        ropts.weight_by_similarity = cfg.use_retrieval && cfg.weight_by_similarity;
        ropts.nu_floor = cfg.nu_floor;
        ropts.nu_live_gradient = cfg.nu_live_gradient;
        ropts.mix_gold = cfg.mix_gold;
        ropts.retrieval_encoder = retriever;
        const std::string path = (out / "checkpoint_refine.bin").string();

        // refine() builds D_aug from the loaded model before it trains
        RefineResult rres = refine(model, vocab, corpus, ropts, [&](std::size_t e, double l) {
            say("refine epoch " + std::to_string(e) + " loss " + std::to_string(l));
            result.refine_fingerprint = save_checkpoint(path, model, vocab, "refine", parent_fp);
        });
        write_corpus((out / "daug.jsonl").string(), rres.daug.records, rres.daug.provenance);
        if (cfg.epochs_refine == 0)
            result.refine_fingerprint = save_checkpoint(path, model, vocab, "refine", parent_fp);
        parent_fp = result.refine_fingerprint;
        parent_path = path;
    }

    result.final_checkpoint_path = parent_path;

    // evaluation on the test split with the final model
    Checkpoint final_ckpt = load_checkpoint(parent_path);
    if (corpus.split_indices(Split::test).empty())
        throw data_error("run: corpus has no test split to evaluate");
    EmbeddingIndex index =
        EmbeddingIndex::build(retriever ? *retriever : final_ckpt.model, vocab, corpus);
    result.test_eval = evaluate_split(final_ckpt.model, vocab, index, corpus, Split::test,
                                      cfg.use_retrieval, retriever);

    nlohmann::json report;
    report["config"] = cfg.to_json();
    report["config_hash"] = cfg.config_hash();
    report["corpus"]["train"] = result.corpus_report.count(Split::train);
    report["corpus"]["valid"] = result.corpus_report.count(Split::valid);
    report["corpus"]["test"] = result.corpus_report.count(Split::test);
    report["corpus"]["duplicates_dropped"] = result.corpus_report.duplicates_dropped;
    report["corpus"]["record_errors"] = result.corpus_report.record_errors.size();
    report["metrics"] = metric_report_json(result.test_eval.report);
    report["exact_match_rate"] = result.test_eval.exact_match_rate;
    report["fingerprints"]["init"] = result.init_fingerprint;
    report["fingerprints"]["pretrain"] = result.pretrain_fingerprint;
    report["fingerprints"]["finetune"] = result.finetune_fingerprint;
    report["fingerprints"]["refine"] = result.refine_fingerprint;
    write_file_bytes((out / "report.json").string(), report.dump(2) + "\n");
    write_text_lines((out / "hyps.txt").string(), result.test_eval.hyps);
    write_text_lines((out / "refs.txt").string(), result.test_eval.refs);
    write_per_example_csv((out / "per_example.csv").string(), result.test_eval);
    say("report written: " + (out / "report.json").string());
    return result;
}

// ----------------------------- ablation harness -----------------------------

struct AblationArm {
    std::string name;
    PipelineConfig config;
};

// Table-style arms; every arm shares the base seed so data order matches.
inline PipelineConfig arm_config(const PipelineConfig& base, const std::string& name) {
    PipelineConfig c = base;
    if (name == "full") {
        // as configured
    } else if (name == "only-generator") {
        c.use_retrieval = false;
        c.weight_by_similarity = false;
        c.skip_pretrain = true;
        c.skip_refine = true;
    } else if (name == "wo-combined") {
        c.independent_retriever = true;
        c.weight_by_similarity = false;
    } else if (name == "wo-pretrained-sr") {
        c.skip_pretrain = true;
        c.skip_refine = true;
    } else if (name == "wo-sr") {
        c.skip_refine = true;
    } else {
        throw contract_error("ablate: unknown arm '" + name + "'");
    }
    return c;
}

inline const std::vector<std::string>& all_ablation_arms() {
    static const std::vector<std::string> arms = {"full", "only-generator", "wo-combined",
                                                  "wo-pretrained-sr", "wo-sr"};
    return arms;
}

struct AblationRow {
    std::string arm;
    MetricReport report;
    double exact_match_rate = 0.0;
};

inline std::vector<AblationRow> ablate(const PipelineConfig& base,
                                       const std::vector<std::string>& arms,
                                       std::ostream* log_stream = nullptr) {
    std::vector<AblationRow> rows;
    for (const auto& name : arms) {
        PipelineConfig cfg = arm_config(base, name);
        cfg.out_dir = (std::filesystem::path(base.out_dir) / ("arm-" + name)).string();
        if (log_stream) (*log_stream) << "=== arm: " << name << "\n";
        PipelineResult res = run_pipeline(cfg, log_stream);
        rows.push_back({name, res.test_eval.report, res.test_eval.exact_match_rate});
    }
    return rows;
}

inline void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw data_error("cannot open file for writing: " + path);
    out << "arm,corpus_bleu,sentence_bleu,rouge_l,meteor,cider,exact_match\n";
    char buf[160];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%.10f,%.10f,%.10f,%.10f,%.10f,%.10f",
                      r.report.corpus_bleu_score, r.report.mean_sentence_bleu,
                      r.report.mean_rouge_l, r.report.mean_meteor, r.report.cider_score,
                      r.exact_match_rate);
        out << r.arm << ',' << buf << "\n";
    }
}

struct KSweepRow {
    std::size_t k = 0;
    MetricReport report;
};

inline std::vector<KSweepRow> k_sweep(const PipelineConfig& base, std::size_t k_lo, std::size_t k_hi,
                                      std::ostream* log_stream = nullptr) {
    if (k_lo < 1 || k_hi < k_lo) throw config_error("k-sweep: need 1 <= lo <= hi");
    std::vector<KSweepRow> rows;
    for (std::size_t k = k_lo; k <= k_hi; ++k) {
        PipelineConfig cfg = base;
        cfg.k = k;
        cfg.out_dir = (std::filesystem::path(base.out_dir) / ("k-" + std::to_string(k))).string();
        if (log_stream) (*log_stream) << "=== k = " << k << "\n";
        PipelineResult res = run_pipeline(cfg, log_stream);
        rows.push_back({k, res.test_eval.report});
    }
    return rows;
}

inline void write_ksweep_csv(const std::string& path, const std::vector<KSweepRow>& rows) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw data_error("cannot open file for writing: " + path);
    out << "k,corpus_bleu,sentence_bleu,rouge_l,meteor,cider\n";
    char buf[160];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%.10f,%.10f,%.10f,%.10f,%.10f",
                      r.report.corpus_bleu_score, r.report.mean_sentence_bleu,
                      r.report.mean_rouge_l, r.report.mean_meteor, r.report.cider_score);
        out << r.k << ',' << buf << "\n";
    }
}

}  // namespace codesum
