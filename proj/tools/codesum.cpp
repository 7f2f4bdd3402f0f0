// codesum: retrieval-augmented code comment generation.
//
// Subcommands: pretrain, finetune, refine, infer, retrieve, evaluate,
// evaluate-retrieval, ablate, run.
// Exit codes: 0 success, 2 configuration/usage error, 3 data error,
// 4 numeric divergence, 1 anything else.

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>

#include "codesum/codesum.hpp"

namespace {

using namespace codesum;

void attach_model_flags(CLI::App* cmd, PipelineConfig& cfg) {
    cmd->add_option("--d-model", cfg.model.d_model, "model width");
    cmd->add_option("--n-heads", cfg.model.n_heads, "attention heads");
    cmd->add_option("--enc-layers", cfg.model.n_enc_layers, "encoder layers");
    cmd->add_option("--dec-layers", cfg.model.n_dec_layers, "decoder layers");
    cmd->add_option("--ff-dim", cfg.model.ff_dim, "feed-forward width");
    cmd->add_option("--max-src-len", cfg.model.max_src_len, "source token limit");
    cmd->add_option("--max-tgt-len", cfg.model.max_tgt_len, "target token limit");
    cmd->add_option("--dropout", cfg.model.dropout_p, "dropout probability");
    cmd->add_option("--min-frequency", cfg.min_frequency, "vocabulary count cutoff");
    cmd->add_option("--schema", cfg.schema, "corpus field renames, e.g. code=src,comment=doc");
    cmd->add_flag_callback("--no-dedup", [&cfg] { cfg.dedup = false; },
                           "keep duplicate (code, comment) pairs");
}

Corpus load_corpus_for(const PipelineConfig& cfg, CorpusLoadReport* rep = nullptr) {
    CorpusLoadOptions opts;
    if (!cfg.schema.empty()) opts.schema = CorpusSchema::parse(cfg.schema);
    opts.dedup = cfg.dedup;
    return Corpus::load(cfg.corpus_path, opts, rep);
}

void report_corpus(const CorpusLoadReport& rep) {
    std::cout << "corpus: " << rep.count(Split::train) << " train / " << rep.count(Split::valid)
              << " valid / " << rep.count(Split::test) << " test";
    if (rep.duplicates_dropped) std::cout << ", " << rep.duplicates_dropped << " duplicates dropped";
    if (rep.cross_split_dropped)
        std::cout << ", " << rep.cross_split_dropped << " cross-split duplicates dropped";
    std::cout << "\n";
    for (const auto& e : rep.record_errors) std::cerr << "warning: " << e << "\n";
}

// Builds the index from the checkpoint encoder, or loads a cache file whose
// fingerprint must match the current encoder.
EmbeddingIndex index_for(const Checkpoint& ckpt, const Corpus& corpus,
                         const std::string& cache_path) {
    if (!cache_path.empty() && std::filesystem::exists(cache_path)) {
        EmbeddingIndex idx = EmbeddingIndex::load(cache_path);
        if (idx.fingerprint() != ckpt.model.encoder_fingerprint())
            throw data_error("index cache '" + cache_path +
                             "' was built by a different encoder (fingerprint mismatch)");
        return idx;
    }
    EmbeddingIndex idx = EmbeddingIndex::build(ckpt.model, ckpt.vocab, corpus);
    if (!cache_path.empty()) idx.save(cache_path);
    return idx;
}

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open file: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    return lines;
}

// --config is applied onto the defaults before CLI11 parses, so explicit
// flags override the file and the file overrides the defaults.
std::string find_config_arg(int argc, char** argv) {
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--config" && i + 1 < argc) return argv[i + 1];
        if (a.rfind("--config=", 0) == 0) return a.substr(9);
    }
    return {};
}

int dispatch(int argc, char** argv) {
    PipelineConfig cfg;
    const std::string config_file = find_config_arg(argc, argv);
    if (!config_file.empty()) load_config_file(cfg, config_file);

    CLI::App app{"retrieval-augmented code comment generation"};
    app.require_subcommand(1);

    std::string config_sink;  // recognized by CLI11; already applied above
    std::string ckpt_path, out_path, index_cache;
    std::string query_text, input_file, output_file;
    std::string hyp_file, ref_file, csv_file;
    std::string split_name_str = "test";
    std::string arms_csv = "full,only-generator,wo-combined,wo-pretrained-sr,wo-sr";
    std::string k_sweep_spec;
    std::string daug_out;
    std::size_t retrieve_k = 5;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_sink, "key = value configuration file");
        cmd->add_option("--seed", cfg.seed, "root seed");
    };

    auto* cmd_pre = app.add_subcommand("pretrain", "phase 1: contrastive encoder pretraining");
    cmd_pre->add_option("--corpus", cfg.corpus_path, "corpus file");
    cmd_pre->add_option("--out", out_path, "output checkpoint")->required();
    cmd_pre->add_option("--epochs", cfg.epochs_pretrain, "pretraining epochs");
    cmd_pre->add_option("--batch-size", cfg.batch_size, "batch size");
    cmd_pre->add_option("--tau", cfg.tau, "contrastive temperature");
    cmd_pre->add_option("--lr", cfg.lr_pretrain, "learning rate");
    add_common(cmd_pre);
    attach_model_flags(cmd_pre, cfg);

    auto* cmd_ft = app.add_subcommand("finetune", "phase 2: joint retriever-generator fine-tuning");
    cmd_ft->add_option("--corpus", cfg.corpus_path, "corpus file");
    cmd_ft->add_option("--ckpt", ckpt_path, "input checkpoint")->required();
    cmd_ft->add_option("--out", out_path, "output checkpoint")->required();
    cmd_ft->add_option("--k", cfg.k, "retrieved exemplars per query");
    cmd_ft->add_option("--epochs", cfg.epochs_finetune, "fine-tuning epochs");
    cmd_ft->add_option("--batch-size", cfg.batch_size, "batch size");
    cmd_ft->add_option("--lr", cfg.lr_finetune, "learning rate");
    cmd_ft->add_option("--schema", cfg.schema, "corpus field renames");
    cmd_ft->add_flag_callback("--no-retrieval", [&cfg] { cfg.use_retrieval = false; },
                              "train on bare queries (generator only)");
    cmd_ft->add_flag_callback("--no-nu-weighting", [&cfg] { cfg.weight_by_similarity = false; },
                              "plain mean over exemplars instead of similarity weighting");
    cmd_ft->add_flag_callback("--no-nu-floor", [&cfg] { cfg.nu_floor = false; },
                              "allow negative similarity weights");
    cmd_ft->add_flag("--nu-live-gradient", cfg.nu_live_gradient,
                     "backpropagate through the similarity weights");
    add_common(cmd_ft);

    auto* cmd_rf = app.add_subcommand("refine", "phase 3: best-of-K self-refinement");
    cmd_rf->add_option("--corpus", cfg.corpus_path, "corpus file");
    cmd_rf->add_option("--ckpt", ckpt_path, "phase-2 checkpoint")->required();
    cmd_rf->add_option("--out", out_path, "output checkpoint")->required();
    cmd_rf->add_option("--K", cfg.refine_K, "candidates per query");
    cmd_rf->add_option("--epochs", cfg.epochs_refine, "refinement epochs");
    cmd_rf->add_option("--lr", cfg.lr_refine, "learning rate");
    cmd_rf->add_option("--batch-size", cfg.batch_size, "batch size");
    cmd_rf->add_option("--k", cfg.k, "retrieved exemplars per query");
    cmd_rf->add_option("--temperature", cfg.refine_temperature, "sampling temperature");
    cmd_rf->add_option("--daug-out", daug_out, "write the augmented dataset here");
    cmd_rf->add_option("--schema", cfg.schema, "corpus field renames");
    cmd_rf->add_flag("--mix-gold", cfg.mix_gold, "also train on the gold comments");
    add_common(cmd_rf);

    auto* cmd_inf = app.add_subcommand("infer", "generate a comment for code");
    cmd_inf->add_option("--ckpt", ckpt_path, "checkpoint")->required();
    cmd_inf->add_option("--corpus", cfg.corpus_path, "exemplar corpus");
    cmd_inf->add_option("--query", query_text, "code snippet");
    cmd_inf->add_option("--input", input_file, "file with one code snippet per line");
    cmd_inf->add_option("--out", output_file, "output file for batch inference");
    cmd_inf->add_option("--index", index_cache, "index cache path (built when missing)");
    cmd_inf->add_option("--schema", cfg.schema, "corpus field renames");

    auto* cmd_ret = app.add_subcommand("retrieve", "top-k nearest exemplars for code");
    cmd_ret->add_option("--ckpt", ckpt_path, "checkpoint")->required();
    cmd_ret->add_option("--corpus", cfg.corpus_path, "exemplar corpus");
    cmd_ret->add_option("--query", query_text, "code snippet")->required();
    cmd_ret->add_option("--k", retrieve_k, "hits to return");
    cmd_ret->add_option("--index", index_cache, "index cache path (built when missing)");
    cmd_ret->add_option("--schema", cfg.schema, "corpus field renames");

    auto* cmd_ev = app.add_subcommand("evaluate", "score hypothesis/reference files");
    cmd_ev->add_option("--hyp", hyp_file, "hypotheses, one per line")->required();
    cmd_ev->add_option("--ref", ref_file, "references, one per line")->required();
    cmd_ev->add_option("--out", output_file, "report JSON")->required();
    cmd_ev->add_option("--csv", csv_file, "per-example CSV");

    auto* cmd_er =
        app.add_subcommand("evaluate-retrieval", "top-1 retrieved-comment quality distribution");
    cmd_er->add_option("--ckpt", ckpt_path, "checkpoint")->required();
    cmd_er->add_option("--corpus", cfg.corpus_path, "corpus file");
    cmd_er->add_option("--split", split_name_str, "train|valid|test");
    cmd_er->add_option("--out", output_file, "summary JSON")->required();
    cmd_er->add_option("--csv", csv_file, "per-example CSV");
    cmd_er->add_option("--index", index_cache, "index cache path (built when missing)");
    cmd_er->add_option("--schema", cfg.schema, "corpus field renames");

    auto* cmd_ab = app.add_subcommand("ablate", "ablation arms and k-sweep");
    cmd_ab->add_option("--corpus", cfg.corpus_path, "corpus file");
    cmd_ab->add_option("--out-dir", cfg.out_dir, "output directory");
    cmd_ab->add_option("--arms", arms_csv, "comma-separated arm names");
    cmd_ab->add_option("--k-sweep", k_sweep_spec, "k range, e.g. 1..5");
    cmd_ab->add_option("--epochs-pretrain", cfg.epochs_pretrain, "phase 1 epochs");
    cmd_ab->add_option("--epochs-finetune", cfg.epochs_finetune, "phase 2 epochs");
    cmd_ab->add_option("--epochs-refine", cfg.epochs_refine, "phase 3 epochs");
    cmd_ab->add_option("--batch-size", cfg.batch_size, "batch size");
    cmd_ab->add_option("--k", cfg.k, "retrieved exemplars per query");
    cmd_ab->add_option("--K", cfg.refine_K, "refinement candidates");
    add_common(cmd_ab);
    attach_model_flags(cmd_ab, cfg);

    auto* cmd_run = app.add_subcommand("run", "full three-phase pipeline plus evaluation");
    cmd_run->add_option("--corpus", cfg.corpus_path, "corpus file");
    cmd_run->add_option("--out-dir", cfg.out_dir, "output directory");
    cmd_run->add_option("--epochs-pretrain", cfg.epochs_pretrain, "phase 1 epochs");
    cmd_run->add_option("--epochs-finetune", cfg.epochs_finetune, "phase 2 epochs");
    cmd_run->add_option("--epochs-refine", cfg.epochs_refine, "phase 3 epochs");
    cmd_run->add_option("--batch-size", cfg.batch_size, "batch size");
    cmd_run->add_option("--k", cfg.k, "retrieved exemplars per query");
    cmd_run->add_option("--K", cfg.refine_K, "refinement candidates");
    cmd_run->add_option("--tau", cfg.tau, "contrastive temperature");
    cmd_run->add_option("--lr-pretrain", cfg.lr_pretrain, "phase 1 learning rate");
    cmd_run->add_option("--lr-finetune", cfg.lr_finetune, "phase 2 learning rate");
    cmd_run->add_option("--lr-refine", cfg.lr_refine, "phase 3 learning rate");
    cmd_run->add_flag("--skip-pretrain", cfg.skip_pretrain, "start phase 2 from initialization");
    cmd_run->add_flag("--skip-refine", cfg.skip_refine, "stop after phase 2");
    add_common(cmd_run);
    attach_model_flags(cmd_run, cfg);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    if (cmd_pre->parsed()) {
        CorpusLoadReport rep;
        Corpus corpus = load_corpus_for(cfg, &rep);
        report_corpus(rep);
        Vocabulary vocab = Vocabulary::build(corpus.pairs(), cfg.min_frequency);
        TransformerConfig mcfg = cfg.model;
        mcfg.vocab_size = vocab.size();
        Transformer model(mcfg, derive_seed(cfg.seed, "model-init"));
        PretrainOptions opts;
        opts.epochs = cfg.epochs_pretrain;
        opts.batch_size = cfg.batch_size;
        opts.tau = cfg.tau;
        opts.lr = cfg.lr_pretrain;
        opts.clip_norm = cfg.clip_norm;
        opts.seed = derive_seed(cfg.seed, "phase-pretrain");
        opts.negatives_second_view = cfg.negatives_second_view;
        pretrain(model, vocab, corpus, opts, nullptr, [&](std::size_t e, double l) {
            std::cout << "pretrain epoch " << e << " loss " << l << "\n";
        });
        const std::uint64_t fp = save_checkpoint(out_path, model, vocab, "pretrain", 0);
        std::cout << "checkpoint " << out_path << " fingerprint " << fp << "\n";
        return 0;
    }

    if (cmd_ft->parsed()) {
        CorpusLoadReport rep;
        Corpus corpus = load_corpus_for(cfg, &rep);
        report_corpus(rep);
        Checkpoint ckpt = load_checkpoint(ckpt_path);
        check_phase_transition(ckpt.phase, "finetune");
        FinetuneOptions opts;
        opts.k = cfg.k;
        opts.epochs = cfg.epochs_finetune;
        opts.batch_size = cfg.batch_size;
        opts.lr = cfg.lr_finetune;
        opts.clip_norm = cfg.clip_norm;
        opts.seed = derive_seed(cfg.seed, "phase-finetune");
        opts.use_retrieval = cfg.use_retrieval;
        opts.weight_by_similarity = cfg.use_retrieval && cfg.weight_by_similarity;
        opts.nu_floor = cfg.nu_floor;
        opts.nu_live_gradient = cfg.nu_live_gradient;
        std::uint64_t fp = 0;
        finetune(ckpt.model, ckpt.vocab, corpus, gold_training_examples(corpus), opts, nullptr,
                 [&](std::size_t e, double l) {
                     std::cout << "finetune epoch " << e << " loss " << l << "\n";
                     fp = save_checkpoint(out_path, ckpt.model, ckpt.vocab, "finetune",
                                          ckpt.fingerprint);
                 });
        if (cfg.epochs_finetune == 0)
            fp = save_checkpoint(out_path, ckpt.model, ckpt.vocab, "finetune", ckpt.fingerprint);
        std::cout << "checkpoint " << out_path << " fingerprint " << fp << "\n";
        return 0;
    }

    if (cmd_rf->parsed()) {
        CorpusLoadReport rep;
        Corpus corpus = load_corpus_for(cfg, &rep);
        report_corpus(rep);
        Checkpoint ckpt = load_checkpoint(ckpt_path);
        check_phase_transition(ckpt.phase, "refine");
        RefineOptions opts;
        opts.decode.K = cfg.refine_K;
        opts.decode.temperature = cfg.refine_temperature;
        opts.decode.seed = derive_seed(cfg.seed, "phase-refine-decode");
        opts.epochs = cfg.epochs_refine;
        opts.batch_size = cfg.batch_size;
        opts.lr = cfg.lr_refine;
        opts.clip_norm = cfg.clip_norm;
        opts.k = cfg.k;
        opts.seed = derive_seed(cfg.seed, "phase-refine");
        opts.weight_by_similarity = cfg.weight_by_similarity;
        opts.nu_floor = cfg.nu_floor;
        opts.nu_live_gradient = cfg.nu_live_gradient;
        opts.mix_gold = cfg.mix_gold;
        std::uint64_t fp = 0;
        RefineResult res =
            refine(ckpt.model, ckpt.vocab, corpus, opts, [&](std::size_t e, double l) {
                std::cout << "refine epoch " << e << " loss " << l << "\n";
                fp = save_checkpoint(out_path, ckpt.model, ckpt.vocab, "refine", ckpt.fingerprint);
            });
        if (cfg.epochs_refine == 0)
            fp = save_checkpoint(out_path, ckpt.model, ckpt.vocab, "refine", ckpt.fingerprint);
        if (!daug_out.empty()) write_corpus(daug_out, res.daug.records, res.daug.provenance);
        const double mean_sel =
            res.daug.selected_rouge.empty()
                ? 0.0
                : std::accumulate(res.daug.selected_rouge.begin(), res.daug.selected_rouge.end(),
                                  0.0) /
                      static_cast<double>(res.daug.selected_rouge.size());
        std::cout << "selected mean rouge-l " << mean_sel << "\n";
        std::cout << "checkpoint " << out_path << " fingerprint " << fp << "\n";
        return 0;
    }

    if (cmd_inf->parsed()) {
        Checkpoint ckpt = load_checkpoint(ckpt_path);
        Corpus corpus = load_corpus_for(cfg);
        EmbeddingIndex index = index_for(ckpt, corpus, index_cache);
        if (!query_text.empty()) {
            std::cout << infer_comment(ckpt.model, ckpt.vocab, index, corpus, query_text) << "\n";
            return 0;
        }
        if (input_file.empty()) throw config_error("infer: provide --query or --input");
        auto lines = read_lines(input_file);
        std::vector<std::string> outputs;
        outputs.reserve(lines.size());
        for (const auto& line : lines)
            outputs.push_back(infer_comment(ckpt.model, ckpt.vocab, index, corpus, line));
        if (output_file.empty()) {
            for (const auto& o : outputs) std::cout << o << "\n";
        } else {
            write_text_lines(output_file, outputs);
            std::cout << outputs.size() << " comments written to " << output_file << "\n";
        }
        return 0;
    }

    if (cmd_ret->parsed()) {
        Checkpoint ckpt = load_checkpoint(ckpt_path);
        Corpus corpus = load_corpus_for(cfg);
        EmbeddingIndex index = index_for(ckpt, corpus, index_cache);
        Tensor q;
        {
            NoGradGuard ng;
            q = embed_code_normalized(ckpt.model, ckpt.vocab, query_text);
        }
        auto hits = index.top_k(q.values(), std::min(retrieve_k, index.size()));
        for (const auto& h : hits) {
            const auto& pair = corpus.by_id(h.pair_id);
            std::cout << h.rank << "\t" << h.pair_id << "\t" << h.score << "\t" << pair.comment
                      << "\n";
        }
        return 0;
    }

    if (cmd_ev->parsed()) {
        auto hyps = read_lines(hyp_file);
        auto refs = read_lines(ref_file);
        if (hyps.size() != refs.size())
            throw data_error("evaluate: hypothesis and reference line counts differ");
        MetricReport rep = evaluate_texts(hyps, refs);
        nlohmann::json j;
        j["metrics"] = metric_report_json(rep);
        write_file_bytes(output_file, j.dump(2) + "\n");
        if (!csv_file.empty()) {
            std::ofstream csv(csv_file, std::ios::binary | std::ios::trunc);
            csv << "index,sentence_bleu,rouge_l,meteor\n";
            for (std::size_t i = 0; i < rep.count; ++i)
                csv << i << ',' << rep.sentence_bleu_scores[i] << ',' << rep.rouge_l_scores[i]
                    << ',' << rep.meteor_scores[i] << "\n";
        }
        std::cout << "corpus-bleu " << rep.corpus_bleu_score << "  s-bleu "
                  << rep.mean_sentence_bleu << "  rouge-l " << rep.mean_rouge_l << "  meteor "
                  << rep.mean_meteor << "  cider " << rep.cider_score << "\n";
        return 0;
    }

    if (cmd_er->parsed()) {
        Checkpoint ckpt = load_checkpoint(ckpt_path);
        Corpus corpus = load_corpus_for(cfg);
        auto split = parse_split(split_name_str);
        if (!split) throw config_error("evaluate-retrieval: unknown split " + split_name_str);
        EmbeddingIndex index = index_for(ckpt, corpus, index_cache);
        auto rows = evaluate_retrieval(ckpt.model, ckpt.vocab, index, corpus, *split);
        nlohmann::json j = retrieval_summary(rows);
        write_file_bytes(output_file, j.dump(2) + "\n");
        if (!csv_file.empty()) {
            std::ofstream csv(csv_file, std::ios::binary | std::ios::trunc);
            csv << "query_id,retrieved_id,score,retrieved_comment_rouge_l\n";
            for (const auto& r : rows)
                csv << r.query_id << ',' << r.retrieved_id << ',' << r.score << ','
                    << r.retrieved_comment_rouge << "\n";
        }
        std::cout << j.dump(2) << "\n";
        return 0;
    }

    if (cmd_ab->parsed()) {
        if (cfg.out_dir.empty()) throw config_error("ablate: out_dir is required");
        if (!k_sweep_spec.empty()) {
            const auto dots = k_sweep_spec.find("..");
            if (dots == std::string::npos)
                throw config_error("ablate: --k-sweep expects lo..hi, e.g. 1..5");
            const std::size_t lo =
                detail::parse_number<std::size_t>(k_sweep_spec.substr(0, dots), "k-sweep");
            const std::size_t hi =
                detail::parse_number<std::size_t>(k_sweep_spec.substr(dots + 2), "k-sweep");
            auto rows = k_sweep(cfg, lo, hi, &std::cout);
            const std::string csv_path =
                (std::filesystem::path(cfg.out_dir) / "ksweep.csv").string();
            write_ksweep_csv(csv_path, rows);
            std::cout << "k-sweep written: " << csv_path << "\n";
            return 0;
        }
        std::vector<std::string> arms;
        std::size_t pos = 0;
        while (pos <= arms_csv.size()) {
            std::size_t comma = arms_csv.find(',', pos);
            if (comma == std::string::npos) comma = arms_csv.size();
            const std::string arm = arms_csv.substr(pos, comma - pos);
            if (!arm.empty()) arms.push_back(arm);
            pos = comma + 1;
        }
        auto rows = ablate(cfg, arms, &std::cout);
        const std::string csv_path = (std::filesystem::path(cfg.out_dir) / "ablate.csv").string();
        write_ablation_csv(csv_path, rows);
        nlohmann::json j;
        for (const auto& r : rows) {
            nlohmann::json e = metric_report_json(r.report);
            e["exact_match_rate"] = r.exact_match_rate;
            j[r.arm] = std::move(e);
        }
        write_file_bytes((std::filesystem::path(cfg.out_dir) / "ablate.json").string(),
                         j.dump(2) + "\n");
        std::cout << "ablation written: " << csv_path << "\n";
        return 0;
    }

    if (cmd_run->parsed()) {
        PipelineResult res = run_pipeline(cfg, &std::cout);
        const auto& m = res.test_eval.report;
        std::cout << "test metrics: corpus-bleu " << m.corpus_bleu_score << "  s-bleu "
                  << m.mean_sentence_bleu << "  rouge-l " << m.mean_rouge_l << "  meteor "
                  << m.mean_meteor << "  cider " << m.cider_score << "\n";
        std::cout << "final checkpoint: " << res.final_checkpoint_path << "\n";
        return 0;
    }

    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return dispatch(argc, argv);
    } catch (const codesum::config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const codesum::contract_error& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const codesum::data_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const codesum::numeric_error& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
