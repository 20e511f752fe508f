// jepa4rec command-line tool: corpus ingestion/synthesis, vocabulary
// building, pretraining, finetuning, evaluation, and the study commands.
//
// Exit codes: 0 success, 1 validation/usage error, 2 runtime or numeric
// failure. Every run writes run.json (resolved config + version + seed)
// into the output directory.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "jepa4rec/corpus.hpp"
#include "jepa4rec/evaluator.hpp"
#include "jepa4rec/pipeline.hpp"
#include "jepa4rec/tokenizer.hpp"
#include "jepa4rec/trainer.hpp"

namespace fs = std::filesystem;
using namespace jepa4rec;

namespace {

constexpr const char* kVersion = "jepa4rec 0.1.0";

struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

int resolve_threads(int flag_value) {
    if (flag_value > 0) return flag_value;
    if (const char* env = std::getenv("JEPA4REC_THREADS"))
        return std::max(1, std::atoi(env));
    return 1;
}

void write_run_json(const fs::path& out_dir, const std::string& command,
                    const json& resolved) {
    json run;
    run["version"] = kVersion;
    run["command"] = command;
    run["config"] = resolved;
    std::ofstream f(out_dir / "run.json");
    f << run.dump(2) << "\n";
}

Corpus load_corpus_dir(const std::string& dir) {
    fs::path items = fs::path(dir) / "items.jsonl";
    fs::path inters = fs::path(dir) / "interactions.jsonl";
    if (!fs::exists(items) || !fs::exists(inters))
        throw ValidationError("corpus directory '" + dir +
                              "' needs items.jsonl and interactions.jsonl");
    return five_core_filter(read_interactions_jsonl(inters.string()),
                            read_items_jsonl(items.string()));
}

void write_corpus_dir(const Corpus& corpus, const fs::path& dir) {
    fs::create_directories(dir);
    write_items_jsonl(corpus, (dir / "items.jsonl").string());
    write_interactions_jsonl(corpus, (dir / "interactions.jsonl").string());
    std::ofstream m(dir / "corpus.manifest.json");
    m << corpus_manifest(corpus).dump(2) << "\n";
}

void write_train_log(const TrainResult& result, const fs::path& path) {
    std::ofstream f(path);
    for (const auto& e : result.epochs) {
        json row{{"epoch", e.epoch},
                 {"loss", e.loss},
                 {"contrastive", e.contrastive},
                 {"mlm", e.mlm},
                 {"mapping", e.mapping},
                 {"val_loss", e.val_loss},
                 {"wall_seconds", e.wall_seconds}};
        f << row.dump() << "\n";
    }
}

std::vector<double> parse_list(const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ','))
        if (!trim(tok).empty()) out.push_back(std::stod(trim(tok)));
    return out;
}

// Shared model/train flag bundle.
struct TrainFlags {
    int d = 128, n_layers = 2, n_heads = 4, d_ff = 256, window = 64;
    int epochs = 10, batch_size = 0; // 0 = stage default
    double lr = 5e-5, tau = 0.05, lambda1 = 0.1, lambda2 = 0.1;
    double history_mask = 0.15, next_mask = 0.5, ema_decay = 0.999;
    double token_drop = 0.0;
    bool no_mlm = false, no_contrastive = false, no_token_type = false,
         no_token_position = false, use_bpr = false;

    void attach(CLI::App* cmd) {
        cmd->add_option("--d", d, "embedding width");
        cmd->add_option("--layers", n_layers, "encoder layers");
        cmd->add_option("--heads", n_heads, "attention heads");
        cmd->add_option("--d-ff", d_ff, "feed-forward width");
        cmd->add_option("--window", window, "attention window (each side)");
        cmd->add_option("--epochs", epochs, "training epochs");
        cmd->add_option("--batch-size", batch_size,
                        "batch size (default 32 pretrain / 16 finetune)");
        cmd->add_option("--lr", lr, "learning rate");
        cmd->add_option("--tau", tau, "softmax temperature");
        cmd->add_option("--lambda1", lambda1, "MLM loss weight");
        cmd->add_option("--lambda2", lambda2, "mapping loss weight");
        cmd->add_option("--history-mask-rate", history_mask,
                        "history token masking rate");
        cmd->add_option("--next-mask-rate", next_mask,
                        "next-item token masking rate");
        cmd->add_option("--ema-decay", ema_decay, "EMA decay");
        cmd->add_option("--token-drop", token_drop,
                        "token-drop rate for the robustness setting");
        cmd->add_flag("--no-mlm", no_mlm, "drop the MLM loss");
        cmd->add_flag("--no-contrastive", no_contrastive,
                      "drop the contrastive loss");
        cmd->add_flag("--no-token-type", no_token_type,
                      "drop token-type embeddings");
        cmd->add_flag("--no-token-position", no_token_position,
                      "drop token-position embeddings");
        cmd->add_flag("--bpr", use_bpr, "finetune with the BPR loss");
    }

    ModelConfig model_config(int vocab_size) const {
        ModelConfig mc;
        mc.d = d;
        mc.n_layers = n_layers;
        mc.n_heads = n_heads;
        mc.d_ff = d_ff;
        mc.window = window;
        mc.vocab_size = vocab_size;
        mc.use_token_type = !no_token_type;
        mc.use_token_position = !no_token_position;
        return mc;
    }

    TrainConfig train_config(const std::string& stage,
                             std::uint64_t seed) const {
        TrainConfig tc;
        tc.stage = stage;
        tc.batch_size =
            batch_size > 0 ? batch_size : (stage == "pretrain" ? 32 : 16);
        tc.learning_rate = lr;
        tc.tau = tau;
        tc.lambda1 = lambda1;
        tc.lambda2 = lambda2;
        tc.history_mask_rate = history_mask;
        tc.next_mask_rate = next_mask;
        tc.ema_decay = ema_decay;
        tc.epochs = epochs;
        tc.seed = seed;
        tc.disable_mlm = no_mlm;
        tc.disable_contrastive = no_contrastive;
        tc.use_bpr = use_bpr;
        tc.token_drop_rate = token_drop;
        return tc;
    }
};

// Pre-scan argv for --config and return its JSON so flag defaults can be
// seeded from the file before CLI11 parses the overrides.
json load_config_file(int argc, char** argv) {
    for (int i = 1; i + 1 < argc; ++i)
        if (std::string(argv[i]) == "--config") {
            std::ifstream f(argv[i + 1]);
            if (!f)
                throw ValidationError(std::string("cannot open config file ") +
                                      argv[i + 1]);
            return json::parse(f);
        }
    return json::object();
}

void seed_flags_from_config(TrainFlags& fl, std::uint64_t& seed,
                            const json& cfg) {
    auto get = [&](const char* key, auto& target) {
        if (cfg.contains(key)) target = cfg.at(key);
    };
    get("d", fl.d);
    get("layers", fl.n_layers);
    get("heads", fl.n_heads);
    get("d_ff", fl.d_ff);
    get("window", fl.window);
    get("epochs", fl.epochs);
    get("batch_size", fl.batch_size);
    get("lr", fl.lr);
    get("tau", fl.tau);
    get("lambda1", fl.lambda1);
    get("lambda2", fl.lambda2);
    get("history_mask_rate", fl.history_mask);
    get("next_mask_rate", fl.next_mask);
    get("ema_decay", fl.ema_decay);
    get("token_drop", fl.token_drop);
    get("no_mlm", fl.no_mlm);
    get("no_contrastive", fl.no_contrastive);
    get("no_token_type", fl.no_token_type);
    get("no_token_position", fl.no_token_position);
    get("bpr", fl.use_bpr);
    get("seed", seed);
}

json resolved_config(const TrainFlags& fl, std::uint64_t seed, int threads) {
    json c;
    c["seed"] = seed;
    c["threads"] = threads;
    c["d"] = fl.d;
    c["layers"] = fl.n_layers;
    c["heads"] = fl.n_heads;
    c["d_ff"] = fl.d_ff;
    c["window"] = fl.window;
    c["epochs"] = fl.epochs;
    c["batch_size"] = fl.batch_size;
    c["lr"] = fl.lr;
    c["tau"] = fl.tau;
    c["lambda1"] = fl.lambda1;
    c["lambda2"] = fl.lambda2;
    c["history_mask_rate"] = fl.history_mask;
    c["next_mask_rate"] = fl.next_mask;
    c["ema_decay"] = fl.ema_decay;
    c["token_drop"] = fl.token_drop;
    c["no_mlm"] = fl.no_mlm;
    c["no_contrastive"] = fl.no_contrastive;
    c["no_token_type"] = fl.no_token_type;
    c["no_token_position"] = fl.no_token_position;
    c["bpr"] = fl.use_bpr;
    return c;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "sequential recommender with joint-embedding pretraining over "
        "text-rendered items"};
    app.require_subcommand(1);

    std::string config_path, corpus_dir, vocab_path, out_dir, ckpt_path,
        init_ckpt, domain, items_path, inters_path, split = "test",
        ratios_csv = "0,0.25,0.5,1.0", drops_csv = "0,0.2,0.4,0.6",
        variant;
    std::uint64_t seed = 0;
    int threads_flag = 0, n_domains = 1, n_items = 100, n_users = 50,
        min_len = 5, max_len = 50, min_count = 1, n_seeds = 5,
        pretrain_epochs = 10;
    TrainFlags flags;

    json file_cfg;
    try {
        file_cfg = load_config_file(argc, argv);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    seed_flags_from_config(flags, seed, file_cfg);

    auto add_common = [&](CLI::App* cmd, bool with_train) {
        cmd->add_option("--config", config_path, "JSON config file");
        cmd->add_option("--seed", seed, "random seed");
        cmd->add_option("--threads", threads_flag,
                        "worker threads (JEPA4REC_THREADS fallback; 1 = "
                        "bit-reproducible)");
        cmd->add_option("--out", out_dir, "output directory")->required();
        if (with_train) flags.attach(cmd);
    };

    auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
    add_common(synth, false);
    synth->add_option("--domains", n_domains, "number of domains");
    synth->add_option("--items", n_items, "items per domain");
    synth->add_option("--users", n_users, "users per domain");
    synth->add_option("--min-len", min_len, "min sequence length");
    synth->add_option("--max-len", max_len, "max sequence length");

    auto* ingest = app.add_subcommand("ingest", "ingest raw JSONL data");
    add_common(ingest, false);
    ingest->add_option("--items", items_path, "items.jsonl")->required();
    ingest->add_option("--interactions", inters_path, "interactions.jsonl")
        ->required();

    auto* build_vocab_cmd =
        app.add_subcommand("build-vocab", "build the vocabulary");
    add_common(build_vocab_cmd, false);
    build_vocab_cmd->add_option("--corpus", corpus_dir, "corpus directory")
        ->required();
    build_vocab_cmd->add_option("--min-count", min_count,
                                "minimum token count");

    auto* pretrain_cmd = app.add_subcommand("pretrain", "pretraining stage");
    add_common(pretrain_cmd, true);
    pretrain_cmd->add_option("--corpus", corpus_dir, "corpus directory")
        ->required();
    pretrain_cmd->add_option("--vocab", vocab_path, "vocab.json")->required();
    pretrain_cmd->add_option("--resume", init_ckpt, "resume checkpoint");

    auto* finetune_cmd = app.add_subcommand("finetune", "finetuning stage");
    add_common(finetune_cmd, true);
    finetune_cmd->add_option("--corpus", corpus_dir, "corpus directory")
        ->required();
    finetune_cmd->add_option("--vocab", vocab_path, "vocab.json")->required();
    finetune_cmd->add_option("--init", init_ckpt,
                             "starting checkpoint (omit to train from "
                             "scratch)");
    finetune_cmd->add_option("--domain", domain, "target domain");
    finetune_cmd->add_option("--resume", ckpt_path, "resume checkpoint");

    auto* eval_cmd = app.add_subcommand("eval", "leave-one-out evaluation");
    add_common(eval_cmd, true);
    eval_cmd->add_option("--corpus", corpus_dir, "corpus directory")
        ->required();
    eval_cmd->add_option("--vocab", vocab_path, "vocab.json")->required();
    eval_cmd->add_option("--ckpt", ckpt_path, "checkpoint")->required();
    eval_cmd->add_option("--split", split, "val | test");
    eval_cmd->add_option("--domain", domain, "target domain");

    auto* zeroshot_cmd = app.add_subcommand(
        "zeroshot", "evaluate pretrained-only parameters on a domain");
    add_common(zeroshot_cmd, true);
    zeroshot_cmd->add_option("--corpus", corpus_dir, "corpus directory")
        ->required();
    zeroshot_cmd->add_option("--vocab", vocab_path, "vocab.json")->required();
    zeroshot_cmd->add_option("--ckpt", ckpt_path, "pretraining checkpoint")
        ->required();
    zeroshot_cmd->add_option("--split", split, "val | test");
    zeroshot_cmd->add_option("--domain", domain, "target domain");

    auto* reveal_cmd = app.add_subcommand(
        "study-reveal", "partial-information reveal study");
    add_common(reveal_cmd, true);
    reveal_cmd->add_option("--corpus", corpus_dir, "corpus directory")
        ->required();
    reveal_cmd->add_option("--vocab", vocab_path, "vocab.json")->required();
    reveal_cmd->add_option("--ckpt", ckpt_path, "pretrained checkpoint")
        ->required();
    reveal_cmd->add_option("--ratios", ratios_csv, "reveal ratios (csv)");
    reveal_cmd->add_option("--domain", domain, "target domain");

    auto* maskratio_cmd = app.add_subcommand(
        "study-mask-ratio", "next-item mask-ratio sweep (full runs)");
    add_common(maskratio_cmd, true);
    maskratio_cmd->add_option("--corpus", corpus_dir, "corpus directory")
        ->required();
    maskratio_cmd->add_option("--vocab", vocab_path, "vocab.json")
        ->required();
    maskratio_cmd->add_option("--ratios", ratios_csv, "mask ratios (csv)");
    maskratio_cmd->add_option("--seeds", n_seeds, "seeds per ratio");
    maskratio_cmd->add_option("--pretrain-epochs", pretrain_epochs,
                              "pretraining epochs per run");
    maskratio_cmd->add_option("--domain", domain, "target domain");

    auto* robust_cmd = app.add_subcommand(
        "study-robustness", "token-drop robustness study");
    add_common(robust_cmd, true);
    robust_cmd->add_option("--corpus", corpus_dir, "corpus directory")
        ->required();
    robust_cmd->add_option("--vocab", vocab_path, "vocab.json")->required();
    robust_cmd->add_option("--init", init_ckpt, "starting checkpoint");
    robust_cmd->add_option("--drops", drops_csv, "token-drop rates (csv)");
    robust_cmd->add_option("--domain", domain, "target domain");

    auto* ablation_cmd = app.add_subcommand(
        "study-ablation", "named ablation presets (full runs)");
    add_common(ablation_cmd, true);
    ablation_cmd->add_option("--corpus", corpus_dir, "corpus directory")
        ->required();
    ablation_cmd->add_option("--vocab", vocab_path, "vocab.json")->required();
    ablation_cmd
        ->add_option("--variant", variant,
                     "no-mlm | no-pretrain | no-token-type | "
                     "no-mlm-no-token-pos | no-mlm-no-token-pos-no-token-type "
                     "| drop-contrastive-pretrain | bpr-finetune")
        ->required();
    ablation_cmd->add_option("--pretrain-epochs", pretrain_epochs,
                             "pretraining epochs");
    ablation_cmd->add_option("--domain", domain, "target domain");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e); // --help
        app.exit(e, std::cout, std::cerr);
        return 1;
    }

    const int threads = resolve_threads(threads_flag);

    try {
        fs::create_directories(out_dir);
        json resolved = resolved_config(flags, seed, threads);

        if (*synth) {
            SynthSpec spec;
            spec.n_domains = n_domains;
            spec.n_items = n_items;
            spec.n_users = n_users;
            spec.min_seq_len = min_len;
            spec.max_seq_len = max_len;
            spec.seed = seed;
            resolved["synth"] = {{"domains", n_domains},
                                 {"items", n_items},
                                 {"users", n_users},
                                 {"min_len", min_len},
                                 {"max_len", max_len}};
            write_run_json(out_dir, "synth", resolved);
            write_corpus_dir(generate_synthetic_corpus(spec), out_dir);
        } else if (*ingest) {
            resolved["items"] = items_path;
            resolved["interactions"] = inters_path;
            write_run_json(out_dir, "ingest", resolved);
            Corpus corpus = five_core_filter(
                read_interactions_jsonl(inters_path),
                read_items_jsonl(items_path));
            write_corpus_dir(corpus, out_dir);
        } else if (*build_vocab_cmd) {
            resolved["corpus"] = corpus_dir;
            resolved["min_count"] = min_count;
            write_run_json(out_dir, "build-vocab", resolved);
            Corpus corpus = load_corpus_dir(corpus_dir);
            Vocabulary vocab = build_vocab(corpus, min_count);
            vocab.save((fs::path(out_dir) / "vocab.json").string());
        } else if (*pretrain_cmd) {
            resolved["corpus"] = corpus_dir;
            resolved["vocab"] = vocab_path;
            write_run_json(out_dir, "pretrain", resolved);
            Corpus corpus = load_corpus_dir(corpus_dir);
            Vocabulary vocab = Vocabulary::load(vocab_path);
            std::optional<Trainer> trainer;
            if (!init_ckpt.empty()) {
                trainer.emplace(
                    load_checkpoint(init_ckpt, vocab.fingerprint()));
                trainer->checkpoint().train_cfg.epochs = flags.epochs;
            } else {
                trainer.emplace(flags.model_config(vocab.size()),
                                flags.train_config("pretrain", seed), vocab);
            }
            TrainResult result = trainer->pretrain(corpus, vocab);
            write_train_log(result, fs::path(out_dir) / "train_log.jsonl");
            save_checkpoint(trainer->checkpoint(),
                            (fs::path(out_dir) / "model.ckpt").string());
        } else if (*finetune_cmd) {
            resolved["corpus"] = corpus_dir;
            resolved["vocab"] = vocab_path;
            resolved["init"] = init_ckpt;
            write_run_json(out_dir, "finetune", resolved);
            Corpus corpus = load_corpus_dir(corpus_dir);
            Vocabulary vocab = Vocabulary::load(vocab_path);
            Corpus target = domain.empty()
                                ? subcorpus_for_domain(corpus,
                                                       corpus.domains.front())
                                : subcorpus_for_domain(corpus, domain);
            std::optional<Trainer> trainer;
            if (!ckpt_path.empty()) {
                trainer.emplace(
                    load_checkpoint(ckpt_path, vocab.fingerprint()));
                trainer->checkpoint().train_cfg.epochs = flags.epochs;
            } else if (!init_ckpt.empty()) {
                Checkpoint ckpt =
                    load_checkpoint(init_ckpt, vocab.fingerprint());
                ckpt.train_cfg = flags.train_config("finetune", seed);
                ckpt.epoch = 0;
                ckpt.adam = AdamState{};
                trainer.emplace(std::move(ckpt));
            } else {
                trainer.emplace(flags.model_config(vocab.size()),
                                flags.train_config("finetune", seed), vocab);
            }
            TrainResult result = trainer->finetune(target, vocab);
            write_train_log(result, fs::path(out_dir) / "train_log.jsonl");
            save_checkpoint(trainer->checkpoint(),
                            (fs::path(out_dir) / "model.ckpt").string());
        } else if (*eval_cmd || *zeroshot_cmd) {
            const bool zero = static_cast<bool>(*zeroshot_cmd);
            resolved["corpus"] = corpus_dir;
            resolved["ckpt"] = ckpt_path;
            resolved["split"] = split;
            write_run_json(out_dir, zero ? "zeroshot" : "eval", resolved);
            if (split != "val" && split != "test")
                throw ValidationError("--split must be val or test");
            Corpus corpus = load_corpus_dir(corpus_dir);
            Vocabulary vocab = Vocabulary::load(vocab_path);
            Corpus target = domain.empty()
                                ? subcorpus_for_domain(corpus,
                                                       corpus.domains.front())
                                : subcorpus_for_domain(corpus, domain);
            Checkpoint ckpt = load_checkpoint(ckpt_path, vocab.fingerprint());
            MetricsReport report = evaluate(
                ckpt.context, target, vocab,
                split == "val" ? EvalSplit::Val : EvalSplit::Test,
                flags.token_drop, seed, threads);
            if (zero) report.split = split + "-zeroshot";
            write_reports_json({report},
                               (fs::path(out_dir) / "report.json").string());
            write_reports_csv({report},
                              (fs::path(out_dir) / "report.csv").string());
            std::cout << report.to_json().dump(2) << "\n";
        } else if (*reveal_cmd) {
            resolved["corpus"] = corpus_dir;
            resolved["ckpt"] = ckpt_path;
            resolved["ratios"] = ratios_csv;
            write_run_json(out_dir, "study-reveal", resolved);
            Corpus corpus = load_corpus_dir(corpus_dir);
            Vocabulary vocab = Vocabulary::load(vocab_path);
            Corpus target = domain.empty()
                                ? subcorpus_for_domain(corpus,
                                                       corpus.domains.front())
                                : subcorpus_for_domain(corpus, domain);
            Checkpoint ckpt = load_checkpoint(ckpt_path, vocab.fingerprint());
            auto reports = reveal_study(ckpt.context, target, vocab,
                                        parse_list(ratios_csv), seed, threads);
            write_reports_json(reports,
                               (fs::path(out_dir) / "report.json").string());
            write_reports_csv(reports,
                              (fs::path(out_dir) / "report.csv").string());
        } else if (*maskratio_cmd) {
            resolved["corpus"] = corpus_dir;
            resolved["ratios"] = ratios_csv;
            resolved["seeds"] = n_seeds;
            write_run_json(out_dir, "study-mask-ratio", resolved);
            Corpus corpus = load_corpus_dir(corpus_dir);
            Vocabulary vocab = Vocabulary::load(vocab_path);
            PipelineConfig pc;
            pc.model = flags.model_config(vocab.size());
            pc.pretrain = flags.train_config("pretrain", seed);
            pc.pretrain.epochs = pretrain_epochs;
            pc.finetune = flags.train_config("finetune", seed);
            pc.target_domain = domain;
            pc.threads = threads;
            std::vector<std::uint64_t> seeds;
            for (int s = 0; s < n_seeds; ++s)
                seeds.push_back(seed + static_cast<std::uint64_t>(s));
            auto reports = mask_ratio_study(corpus, vocab, pc,
                                            parse_list(ratios_csv), seeds);
            write_reports_json(reports,
                               (fs::path(out_dir) / "report.json").string());
            write_reports_csv(reports,
                              (fs::path(out_dir) / "report.csv").string());
        } else if (*robust_cmd) {
            resolved["corpus"] = corpus_dir;
            resolved["drops"] = drops_csv;
            resolved["init"] = init_ckpt;
            write_run_json(out_dir, "study-robustness", resolved);
            Corpus corpus = load_corpus_dir(corpus_dir);
            Vocabulary vocab = Vocabulary::load(vocab_path);
            Corpus target = domain.empty()
                                ? subcorpus_for_domain(corpus,
                                                       corpus.domains.front())
                                : subcorpus_for_domain(corpus, domain);
            std::optional<Checkpoint> start;
            if (!init_ckpt.empty())
                start = load_checkpoint(init_ckpt, vocab.fingerprint());
            auto reports = robustness_study(
                target, vocab, flags.model_config(vocab.size()),
                flags.train_config("finetune", seed), parse_list(drops_csv),
                start ? &*start : nullptr, threads);
            write_reports_json(reports,
                               (fs::path(out_dir) / "report.json").string());
            write_reports_csv(reports,
                              (fs::path(out_dir) / "report.csv").string());
        } else if (*ablation_cmd) {
            resolved["corpus"] = corpus_dir;
            resolved["variant"] = variant;
            write_run_json(out_dir, "study-ablation", resolved);
            Corpus corpus = load_corpus_dir(corpus_dir);
            Vocabulary vocab = Vocabulary::load(vocab_path);

            TrainFlags fl = flags;
            bool skip_pretrain = false;
            if (variant == "no-mlm") {
                fl.no_mlm = true;
            } else if (variant == "no-pretrain") {
                skip_pretrain = true;
            } else if (variant == "no-token-type") {
                fl.no_token_type = true;
            } else if (variant == "no-mlm-no-token-pos") {
                fl.no_mlm = true;
                fl.no_token_position = true;
            } else if (variant == "no-mlm-no-token-pos-no-token-type") {
                fl.no_mlm = true;
                fl.no_token_position = true;
                fl.no_token_type = true;
            } else if (variant == "drop-contrastive-pretrain") {
                fl.no_contrastive = true;
            } else if (variant == "bpr-finetune") {
                fl.use_bpr = true;
            } else {
                throw ValidationError("unknown ablation variant: " + variant);
            }

            PipelineConfig pc;
            pc.model = fl.model_config(vocab.size());
            pc.pretrain = fl.train_config("pretrain", seed);
            pc.pretrain.epochs = skip_pretrain ? 0 : pretrain_epochs;
            pc.finetune = fl.train_config("finetune", seed);
            pc.target_domain = domain;
            pc.threads = threads;
            MetricsReport report =
                pretrain_finetune_eval(corpus, vocab, pc, seed);
            report.split = "test(" + variant + ")";
            write_reports_json({report},
                               (fs::path(out_dir) / "report.json").string());
            write_reports_csv({report},
                              (fs::path(out_dir) / "report.csv").string());
            std::cout << report.to_json().dump(2) << "\n";
        }
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const CorpusError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const TokenizerError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "failure: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
