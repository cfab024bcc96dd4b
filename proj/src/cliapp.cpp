#include "tinyalign/cliapp.hpp"

#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "tinyalign/baselines.hpp"
#include "tinyalign/checkpoint.hpp"
#include "tinyalign/evalmetrics.hpp"
#include "tinyalign/kernels.hpp"
#include "tinyalign/runio.hpp"

namespace fs = std::filesystem;

namespace tinyalign {

// ------------------------------------------------------------- config json

namespace {

nlohmann::json synth_to_json(const SynthParams& p) {
    return {{"pairs", p.pairs},
            {"eval_pairs", p.eval_pairs},
            {"regime", p.regime},
            {"vocab_size", p.vocab_size},
            {"d_l", p.d_l},
            {"lm_heads", p.lm_heads},
            {"duration_min", p.duration_min},
            {"duration_max", p.duration_max},
            {"token_slots", p.token_slots},
            {"fps", p.fps},
            {"d_f", p.d_f},
            {"fixed_len", p.fixed_len},
            {"d_t", p.d_t},
            {"d_g_min", p.d_g_min},
            {"d_g_max", p.d_g_max},
            {"min_tokens", p.min_tokens},
            {"max_tokens", p.max_tokens},
            {"noise", p.noise},
            {"raw_samples_per_frame", p.raw_samples_per_frame},
            {"pattern_count", p.pattern_count}};
}

void synth_from_json(const nlohmann::json& j, SynthParams& p) {
    p.pairs = j.value("pairs", p.pairs);
    p.eval_pairs = j.value("eval_pairs", p.eval_pairs);
    p.regime = j.value("regime", p.regime);
    p.vocab_size = j.value("vocab_size", p.vocab_size);
    p.d_l = j.value("d_l", p.d_l);
    p.lm_heads = j.value("lm_heads", p.lm_heads);
    p.duration_min = j.value("duration_min", p.duration_min);
    p.duration_max = j.value("duration_max", p.duration_max);
    p.token_slots = j.value("token_slots", p.token_slots);
    p.fps = j.value("fps", p.fps);
    p.d_f = j.value("d_f", p.d_f);
    p.fixed_len = j.value("fixed_len", p.fixed_len);
    p.d_t = j.value("d_t", p.d_t);
    p.d_g_min = j.value("d_g_min", p.d_g_min);
    p.d_g_max = j.value("d_g_max", p.d_g_max);
    p.min_tokens = j.value("min_tokens", p.min_tokens);
    p.max_tokens = j.value("max_tokens", p.max_tokens);
    p.noise = j.value("noise", p.noise);
    p.raw_samples_per_frame = j.value("raw_samples_per_frame", p.raw_samples_per_frame);
    p.pattern_count = j.value("pattern_count", p.pattern_count);
}

}  // namespace

std::string ExperimentConfig::to_json() const {
    nlohmann::json j{
        {"seed", seed},
        {"out", out},
        {"data", data},
        {"synth", synth_to_json(synth)},
        {"model",
         {{"hidden", model.hidden},
          {"heads", model.heads},
          {"layers", model.layers},
          {"token_cast", model.token_cast},
          {"mlp_projector", model.mlp_projector}}},
        {"train",
         {{"lr0", train.lr0},
          {"max_epochs", train.max_epochs},
          {"epsilon", train.epsilon},
          {"window", train.window},
          {"target_loss", train.target_loss},
          {"alpha", train.alpha},
          {"beta", train.beta}}},
        {"generation",
         {{"temperature", generation.temperature},
          {"top_k", generation.top_k},
          {"max_len", generation.max_len}}},
        {"instruction", instruction}};
    return j.dump(2) + "\n";
}

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(ParseError::Kind::bad_header, std::string("config: ") + e.what());
    }
    ExperimentConfig cfg;
    cfg.seed = j.value("seed", cfg.seed);
    cfg.out = j.value("out", cfg.out);
    cfg.data = j.value("data", cfg.data);
    if (j.contains("synth")) synth_from_json(j["synth"], cfg.synth);
    if (j.contains("model")) {
        const auto& m = j["model"];
        cfg.model.hidden = m.value("hidden", cfg.model.hidden);
        cfg.model.heads = m.value("heads", cfg.model.heads);
        cfg.model.layers = m.value("layers", cfg.model.layers);
        cfg.model.token_cast = m.value("token_cast", cfg.model.token_cast);
        cfg.model.mlp_projector = m.value("mlp_projector", cfg.model.mlp_projector);
    }
    if (j.contains("train")) {
        const auto& t = j["train"];
        cfg.train.lr0 = t.value("lr0", cfg.train.lr0);
        cfg.train.max_epochs = t.value("max_epochs", cfg.train.max_epochs);
        cfg.train.epsilon = t.value("epsilon", cfg.train.epsilon);
        cfg.train.window = t.value("window", cfg.train.window);
        cfg.train.target_loss = t.value("target_loss", cfg.train.target_loss);
        cfg.train.alpha = t.value("alpha", cfg.train.alpha);
        cfg.train.beta = t.value("beta", cfg.train.beta);
    }
    if (j.contains("generation")) {
        const auto& g = j["generation"];
        cfg.generation.temperature = g.value("temperature", cfg.generation.temperature);
        cfg.generation.top_k = g.value("top_k", cfg.generation.top_k);
        cfg.generation.max_len = g.value("max_len", cfg.generation.max_len);
    }
    cfg.instruction = j.value("instruction", cfg.instruction);
    return cfg;
}

// -------------------------------------------------------------- converters

FeatureRegime regime_from_params(const SynthParams& p) {
    FeatureRegime r;
    r.kind = regime_from_name(p.regime);
    r.d_f = p.d_f;
    r.frames_per_second = p.fps;
    r.fixed_len = p.fixed_len;
    r.d_t = p.d_t;
    r.d_g_min = p.d_g_min;
    r.d_g_max = p.d_g_max;
    return r;
}

SynthOptions synth_options_from_params(const SynthParams& p) {
    SynthOptions o;
    o.regime = regime_from_params(p);
    o.token_slots = p.token_slots;
    o.duration_min = p.duration_min;
    o.duration_max = p.duration_max;
    o.min_tokens = p.min_tokens;
    o.max_tokens = p.max_tokens;
    o.noise = p.noise;
    o.raw_samples_per_frame = p.raw_samples_per_frame;
    o.pattern_count = p.pattern_count;
    return o;
}

TrainConfig train_config_from_params(const TrainParams& p, uint64_t seed) {
    TrainConfig tc;
    tc.lr0 = p.lr0;
    tc.max_epochs = p.max_epochs;
    tc.epsilon = p.epsilon;
    tc.window = p.window;
    if (p.target_loss >= 0)
        tc.target_loss = p.target_loss;
    else
        tc.target_loss.reset();
    tc.weights = {p.alpha, p.beta};
    tc.seed = mix_seed(seed, 0x7281);
    return tc;
}

GenerationSettings generation_settings(const GenerationParams& p, uint64_t seed) {
    GenerationSettings s;
    s.temperature = p.temperature;
    s.top_k = p.top_k;
    s.max_len = p.max_len;
    s.seed = mix_seed(seed, 0x9e4);
    return s;
}

int pick_lm_heads(int d_l, int requested) {
    if (requested > 0) {
        if (d_l % requested != 0)
            throw ConfigError("lm heads " + std::to_string(requested) + " does not divide d_l " +
                              std::to_string(d_l));
        return requested;
    }
    for (int h : {4, 2, 1})
        if (d_l % h == 0) return h;
    return 1;
}

// ----------------------------------------------------------------- dataset

void synthesize_dataset_dir(const ExperimentConfig& cfg, const std::string& dir,
                            std::vector<std::string>* artifacts) {
    DatasetBuildOptions opt;
    opt.synth = synth_options_from_params(cfg.synth);
    opt.d_l = cfg.synth.d_l;
    opt.eval_pairs = cfg.synth.eval_pairs;

    auto ds = build_synthetic_dataset(cfg.synth.pairs, opt.synth.regime, cfg.synth.vocab_size,
                                      cfg.seed, dir, opt);

    ToyLmConfig lm_cfg;
    lm_cfg.d_l = cfg.synth.d_l;
    lm_cfg.heads = pick_lm_heads(cfg.synth.d_l, cfg.synth.lm_heads);
    lm_cfg.seed = mix_seed(cfg.seed, 0x1a2b);
    auto lm = ToyLm<float>::init(lm_cfg, ds.table);
    save_toylm((fs::path(dir) / "toylm.tabf").string(), lm);

    if (artifacts) {
        artifacts->push_back("manifest.jsonl");
        artifacts->push_back("vocab.json");
        artifacts->push_back("toylm.tabf");
        for (const auto& e : ds.manifest) {
            artifacts->push_back(e.features);
            if (!e.raw.empty()) artifacts->push_back(e.raw);
        }
    }
}

LoadedDataset load_dataset(const std::string& dir) {
    LoadedDataset ds;
    ds.dir = dir;
    const auto manifest_path = (fs::path(dir) / "manifest.jsonl").string();
    if (!fs::exists(manifest_path))
        throw ParseError(ParseError::Kind::io, "missing file: " + manifest_path);
    ds.manifest = load_manifest(manifest_path);
    ds.vocab = load_vocab((fs::path(dir) / "vocab.json").string());
    ds.lm = load_toylm((fs::path(dir) / "toylm.tabf").string());
    return ds;
}

// ------------------------------------------------------------- subcommands

namespace {

std::string hex64(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

nlohmann::json rouge_json(const RougeScore& s) {
    return {{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}};
}

int infer_feature_dim(const LoadedDataset& ds) {
    for (const auto& e : ds.manifest) {
        auto f = read_features((fs::path(ds.dir) / e.features).string());
        return f.d_a;
    }
    throw ValueError("dataset manifest is empty");
}

BridgeFormerConfig model_config(const ExperimentConfig& cfg, int d_a, int d_l) {
    BridgeFormerConfig mc;
    mc.d_a = d_a;
    mc.hidden = cfg.model.hidden;
    mc.heads = cfg.model.heads;
    mc.layers = cfg.model.layers;
    mc.token_cast = cfg.model.token_cast;
    mc.d_l = d_l;
    mc.seed = mix_seed(cfg.seed, 0x3c4d);
    mc.validate();
    return mc;
}

void require_out(const ExperimentConfig& cfg) {
    if (cfg.out.empty()) throw ConfigError("--out is required");
    fs::create_directories(cfg.out);
}

// Resolves cfg.data, synthesizing under <out>/data when absent.
std::string ensure_data(const ExperimentConfig& cfg, std::vector<std::string>* artifacts) {
    if (!cfg.data.empty()) return cfg.data;
    const std::string dir = (fs::path(cfg.out) / "data").string();
    if (!fs::exists(fs::path(dir) / "manifest.jsonl")) synthesize_dataset_dir(cfg, dir, nullptr);
    if (artifacts) artifacts->push_back("data");
    return dir;
}

int cmd_synth(const ExperimentConfig& cfg) {
    require_out(cfg);
    std::vector<std::string> artifacts;
    synthesize_dataset_dir(cfg, cfg.out, &artifacts);
    write_text_file((fs::path(cfg.out) / "config.json").string(), cfg.to_json());
    artifacts.push_back("config.json");
    write_artifacts(cfg.out, std::move(artifacts));
    std::cout << "synth: wrote " << cfg.synth.pairs << " train + " << cfg.synth.eval_pairs
              << " eval pairs under " << cfg.out << "\n";
    return 0;
}

int cmd_train(const ExperimentConfig& cfg) {
    require_out(cfg);
    std::vector<std::string> artifacts;
    const std::string data_dir = ensure_data(cfg, &artifacts);
    auto ds = load_dataset(data_dir);
    verify_manifest(ds.manifest, ds.dir);

    const auto& table = ds.lm.table;
    auto mc = model_config(cfg, infer_feature_dim(ds), table.d_l);
    auto pairs = load_train_pairs(ds.manifest, ds.dir, ds.vocab, table, mc.token_cast, "train");
    if (pairs.empty()) throw ValueError("no train-split entries in " + data_dir);

    auto model = BridgeFormer<float>::init(mc);
    auto tc = train_config_from_params(cfg.train, cfg.seed);
    const uint64_t table_before = table.byte_hash();
    auto report = train_until_converged(model, pairs, table, tc);
    if (table.byte_hash() != table_before)
        throw ContractError("embedding table changed during training");

    save_bridgeformer((fs::path(cfg.out) / "checkpoint.tabf").string(), model);
    write_text_file((fs::path(cfg.out) / "config.json").string(), cfg.to_json());

    CsvBuilder loss_csv;
    loss_csv.row({"epoch", "mean_loss", "lr"});
    const int64_t total_steps = static_cast<int64_t>(tc.max_epochs) * pairs.size();
    for (size_t i = 0; i < report.loss_history.size(); ++i)
        loss_csv.row({std::to_string(i + 1), format_double(report.loss_history[i]),
                      format_double(lr_at(static_cast<int64_t>(i) * pairs.size(), total_steps,
                                          tc.lr0))});
    write_text_file((fs::path(cfg.out) / "loss.csv").string(), loss_csv.str());

    nlohmann::json metrics{
        {"final_loss", report.loss_history.empty() ? 0.0 : report.loss_history.back()},
        {"epochs_run", report.epochs_run},
        {"stop_reason", report.stop_reason},
        {"converged_epoch",
         report.converged_epoch ? nlohmann::json(*report.converged_epoch) : nlohmann::json()},
        {"train_pairs", pairs.size()},
        {"param_count", model.param_count()},
        {"checkpoint_hash", hex64(model.param_hash())},
        {"table_hash", hex64(table.byte_hash())}};
    if (tc.target_loss) {
        auto ct = convergence_time(report, *tc.target_loss);
        metrics["target_epoch"] = ct ? nlohmann::json(ct->first) : nlohmann::json();
    }
    write_text_file((fs::path(cfg.out) / "metrics.json").string(), metrics.dump(2) + "\n");

    TimingLog timing;
    timing.add("train_wall_seconds", report.wall_clock_seconds);
    timing.write(cfg.out);

    artifacts.insert(artifacts.end(),
                     {"checkpoint.tabf", "config.json", "loss.csv", "metrics.json", "timing.log"});
    write_artifacts(cfg.out, std::move(artifacts));

    std::cout << "train: " << report.epochs_run << " epochs, final loss "
              << (report.loss_history.empty() ? 0.0 : report.loss_history.back()) << " ("
              << report.stop_reason << "), " << report.wall_clock_seconds << "s\n";
    return 0;
}

CsvBuilder per_entry_csv(const DualPathResult& result) {
    CsvBuilder csv;
    csv.row({"entry", "skipped", "r1_precision", "r1_recall", "r1_f1", "rl_precision",
             "rl_recall", "rl_f1", "ref_len", "hyp_len"});
    for (const auto& e : result.entries)
        csv.row({std::to_string(e.index), e.skipped ? "1" : "0", format_double(e.r1.precision),
                 format_double(e.r1.recall), format_double(e.r1.f1),
                 format_double(e.rl.precision), format_double(e.rl.recall),
                 format_double(e.rl.f1), std::to_string(e.ref_len), std::to_string(e.hyp_len)});
    return csv;
}

int cmd_eval(const ExperimentConfig& cfg, const std::string& checkpoint,
             const std::string& split) {
    require_out(cfg);
    if (cfg.data.empty()) throw ConfigError("eval: --data is required");
    auto ds = load_dataset(cfg.data);
    auto model = load_bridgeformer(checkpoint);
    auto settings = generation_settings(cfg.generation, cfg.seed);

    auto with_inst =
        dual_path_eval(projector_fn(model), ds.lm, ds.lm.table, ds.manifest, ds.dir, ds.vocab,
                       cfg.instruction, settings, model.cfg.token_cast, split);
    auto without_inst =
        dual_path_eval(projector_fn(model), ds.lm, ds.lm.table, ds.manifest, ds.dir, ds.vocab, "",
                       settings, model.cfg.token_cast, split);

    write_text_file((fs::path(cfg.out) / "with_instruction.csv").string(),
                    per_entry_csv(with_inst).str());
    write_text_file((fs::path(cfg.out) / "without_instruction.csv").string(),
                    per_entry_csv(without_inst).str());

    nlohmann::json metrics{
        {"n_entries", with_inst.n_entries},
        {"n_skipped", with_inst.n_skipped},
        {"token_cast", model.cfg.token_cast},
        {"with_instruction",
         {{"instruction", cfg.instruction},
          {"rouge1", rouge_json(with_inst.rouge1_mean)},
          {"rougeL", rouge_json(with_inst.rougeL_mean)}}},
        {"without_instruction",
         {{"rouge1", rouge_json(without_inst.rouge1_mean)},
          {"rougeL", rouge_json(without_inst.rougeL_mean)}}}};
    write_text_file((fs::path(cfg.out) / "metrics.json").string(), metrics.dump(2) + "\n");
    write_text_file((fs::path(cfg.out) / "config.json").string(), cfg.to_json());
    write_artifacts(cfg.out, {"with_instruction.csv", "without_instruction.csv", "metrics.json",
                              "config.json"});

    std::cout << "eval: rouge1 f1 " << with_inst.rouge1_mean.f1 << " (with instruction), "
              << without_inst.rouge1_mean.f1 << " (without), " << with_inst.n_entries
              << " entries, " << with_inst.n_skipped << " skipped\n";
    return 0;
}

int cmd_infer(const ExperimentConfig& cfg, const std::string& checkpoint,
              const std::string& features_path) {
    require_out(cfg);
    if (cfg.data.empty()) throw ConfigError("infer: --data is required");
    auto ds = load_dataset(cfg.data);
    auto model = load_bridgeformer(checkpoint);
    auto features = read_features(features_path);

    core::Tape<float> tape(false);
    auto e_audio = model.forward(tape, features.data);
    auto e_inst = embed_instruction<float>(ds.lm.table, cfg.instruction, ds.vocab);
    auto settings = generation_settings(cfg.generation, cfg.seed);
    auto ids = generate(ds.lm, inject_instruction(e_inst, e_audio), settings);
    auto aligned = nearest_token_decode(e_audio, ds.lm.table);

    std::vector<std::string> words, aligned_words;
    for (int id : ids) words.push_back(ds.vocab.token(id));
    for (int id : aligned) aligned_words.push_back(ds.vocab.token(id));

    nlohmann::json out{{"features", features_path},
                       {"instruction", cfg.instruction},
                       {"generated_ids", ids},
                       {"generated_words", words},
                       {"aligned_ids", aligned},
                       {"aligned_words", aligned_words}};
    write_text_file((fs::path(cfg.out) / "generation.json").string(), out.dump(2) + "\n");
    write_text_file((fs::path(cfg.out) / "config.json").string(), cfg.to_json());
    write_artifacts(cfg.out, {"generation.json", "config.json"});

    std::cout << detokenize(ids, ds.vocab) << "\n";
    return 0;
}

int cmd_baseline(const ExperimentConfig& cfg, const std::string& approaches_arg) {
    require_out(cfg);
    std::vector<std::string> artifacts;
    const std::string data_dir = ensure_data(cfg, &artifacts);
    auto ds = load_dataset(data_dir);
    verify_manifest(ds.manifest, ds.dir);
    const auto& table = ds.lm.table;

    std::vector<Approach> approaches;
    {
        std::string token;
        for (char c : approaches_arg + ",") {
            if (c == ',') {
                if (!token.empty()) approaches.push_back(approach_from_name(token));
                token.clear();
            } else {
                token.push_back(c);
            }
        }
    }
    if (approaches.empty()) throw ConfigError("baseline: no approaches selected");

    // In-memory suite with raw signals.
    std::vector<BaselineEntry> suite;
    int d_a = 0, raw_dim = 0;
    for (const auto& e : ds.manifest) {
        if (e.split != "train") continue;
        BaselineEntry be;
        auto f = read_features((fs::path(ds.dir) / e.features).string());
        d_a = f.d_a;
        be.features = f.data;
        if (e.raw.empty()) throw ValueError("baseline: manifest entry lacks a raw signal: " + e.features);
        auto r = read_features((fs::path(ds.dir) / e.raw).string());
        raw_dim = r.d_a;
        be.raw = r.data;
        be.cast_ids =
            cast_tokens(tokenize(e.text, ds.vocab), cfg.model.token_cast, table.pad_id);
        suite.push_back(std::move(be));
    }
    if (suite.empty()) throw ValueError("baseline: no train-split entries");

    BaselineSetup setup;
    setup.projector_cfg = model_config(cfg, d_a, table.d_l);
    setup.lm_cfg = ds.lm.cfg;
    setup.encoder_cfg.in_dim = raw_dim;
    setup.encoder_cfg.d_a = d_a;
    setup.encoder_cfg.seed = mix_seed(cfg.seed, 0x5e6f);
    setup.train = train_config_from_params(cfg.train, cfg.seed);
    setup.mlp_projector = cfg.model.mlp_projector;

    auto settings = generation_settings(cfg.generation, cfg.seed);
    std::vector<BaselineRun> runs;
    TimingLog timing;
    for (Approach approach : approaches) {
        TrainedComponents trained;
        auto run = run_approach(approach, suite, table, setup, &trained);
        timing.add(approach_name(approach) + "_wall_seconds", run.report.wall_clock_seconds);
        if (run.time_to_target)
            timing.add(approach_name(approach) + "_secs_to_target", run.time_to_target->second);

        // Dual-path ROUGE through the run's own components.
        trained.lm.frozen = true;
        ProjectorFn audio_fn;
        if (approach == Approach::a3) {
            audio_fn = [&trained](const EvalItem& item) {
                auto raw = read_features(
                    (fs::path(item.base_dir) / item.entry->raw).string());
                core::Tape<float> t(false);
                return trained.mlp ? trained.mlp_projector.forward(
                                         t, trained.encoder.forward(t, raw.data))
                                   : trained.transformer.forward(
                                         t, trained.encoder.forward(t, raw.data));
            };
        } else if (setup.mlp_projector) {
            audio_fn = [&trained](const EvalItem& item) {
                core::Tape<float> t(false);
                return trained.mlp_projector.forward(t, item.features.data);
            };
        } else {
            audio_fn = [&trained](const EvalItem& item) {
                core::Tape<float> t(false);
                return trained.transformer.forward(t, item.features.data);
            };
        }
        auto scores = dual_path_eval(audio_fn, trained.lm, table, ds.manifest, ds.dir, ds.vocab,
                                     cfg.instruction, settings, cfg.model.token_cast, "train");
        run.rouge1_mean = scores.rouge1_mean;
        run.rougeL_mean = scores.rougeL_mean;
        runs.push_back(std::move(run));

        // Per-run loss curve.
        CsvBuilder loss_csv;
        loss_csv.row({"epoch", "mean_loss"});
        for (size_t i = 0; i < runs.back().report.loss_history.size(); ++i)
            loss_csv.row({std::to_string(i + 1),
                          format_double(runs.back().report.loss_history[i])});
        const std::string name = "loss_" + approach_name(approach) + ".csv";
        write_text_file((fs::path(cfg.out) / name).string(), loss_csv.str());
        artifacts.push_back(name);

        if (!freeze_discipline_ok(runs.back()))
            throw ContractError("freeze discipline violated for " + approach_name(approach));
    }

    auto rows = compare_runs(runs);
    CsvBuilder comparison;
    comparison.row({"approach", "reached_target", "epochs_to_target", "epochs_run", "final_loss",
                    "rouge1_f1", "rougeL_f1"});
    for (const auto& r : rows)
        comparison.row({r.approach, r.reached_target ? "1" : "0",
                        std::to_string(r.epochs_to_target), std::to_string(r.epochs_run),
                        format_double(r.final_loss), format_double(r.rouge1_f1),
                        format_double(r.rougeL_f1)});
    write_text_file((fs::path(cfg.out) / "comparison.csv").string(), comparison.str());

    // Human-readable report mirrors the R-1 / R-L / C-T column layout.
    std::vector<std::vector<std::string>> table_rows;
    table_rows.push_back({"approach", "R-1", "R-L", "C-T(s)", "C-T(epochs)", "final_loss"});
    for (const auto& r : rows) {
        char r1[32], rl[32], fl[32], ct[32];
        std::snprintf(r1, sizeof(r1), "%.3f", r.rouge1_f1);
        std::snprintf(rl, sizeof(rl), "%.3f", r.rougeL_f1);
        std::snprintf(fl, sizeof(fl), "%.4f", r.final_loss);
        if (r.reached_target)
            std::snprintf(ct, sizeof(ct), "%.2f", r.secs_to_target);
        else
            std::snprintf(ct, sizeof(ct), "%s", "did not converge");
        table_rows.push_back({r.approach, r1, rl, ct,
                              r.reached_target ? std::to_string(r.epochs_to_target) : "-", fl});
    }
    write_text_file((fs::path(cfg.out) / "report.txt").string(), format_table(table_rows));

    write_text_file((fs::path(cfg.out) / "config.json").string(), cfg.to_json());
    timing.write(cfg.out);
    artifacts.insert(artifacts.end(),
                     {"comparison.csv", "report.txt", "config.json", "timing.log"});
    write_artifacts(cfg.out, std::move(artifacts));

    std::cout << format_table(table_rows);
    return 0;
}

int cmd_scaling(const ExperimentConfig& cfg, const std::vector<int>& sizes) {
    require_out(cfg);
    if (sizes.empty()) throw ConfigError("scaling: --sizes is required");
    for (int s : sizes)
        if (s < 1) throw ConfigError("scaling: sizes must be >= 1");
    std::vector<int> sorted_sizes = sizes;
    std::sort(sorted_sizes.begin(), sorted_sizes.end());

    // One dataset at the largest size; each smaller size trains on a
    // prefix, so size k is a subset of size k+1.
    ExperimentConfig synth_cfg = cfg;
    synth_cfg.synth.pairs = sorted_sizes.back();
    const std::string data_dir = (fs::path(cfg.out) / "data").string();
    if (!fs::exists(fs::path(data_dir) / "manifest.jsonl"))
        synthesize_dataset_dir(synth_cfg, data_dir, nullptr);
    auto ds = load_dataset(data_dir);
    const auto& table = ds.lm.table;
    auto mc = model_config(cfg, infer_feature_dim(ds), table.d_l);
    auto all_pairs = load_train_pairs(ds.manifest, ds.dir, ds.vocab, table, mc.token_cast, "train");
    auto settings = generation_settings(cfg.generation, cfg.seed);

    CsvBuilder csv;
    csv.row({"size", "epochs_to_target", "epochs_run", "final_loss", "rouge1_f1"});
    TimingLog timing;
    for (int size : sorted_sizes) {
        if (size > static_cast<int>(all_pairs.size()))
            throw ConfigError("scaling: size " + std::to_string(size) + " exceeds dataset");
        std::vector<TrainPair<float>> subset(all_pairs.begin(), all_pairs.begin() + size);
        auto model = BridgeFormer<float>::init(mc);
        auto tc = train_config_from_params(cfg.train, cfg.seed);
        auto report = train_until_converged(model, subset, table, tc);

        DatasetManifest subset_manifest(ds.manifest.begin(), ds.manifest.begin() + size);
        auto scores = dual_path_eval(projector_fn(model), ds.lm, table, subset_manifest, ds.dir,
                                     ds.vocab, cfg.instruction, settings, mc.token_cast, "train");

        int epochs_to_target = -1;
        if (tc.target_loss) {
            auto ct = convergence_time(report, *tc.target_loss);
            if (ct) {
                epochs_to_target = ct->first;
                timing.add("size_" + std::to_string(size) + "_secs_to_target", ct->second);
            }
        }
        timing.add("size_" + std::to_string(size) + "_wall_seconds", report.wall_clock_seconds);
        csv.row({std::to_string(size), std::to_string(epochs_to_target),
                 std::to_string(report.epochs_run),
                 format_double(report.loss_history.empty() ? 0.0 : report.loss_history.back()),
                 format_double(scores.rouge1_mean.f1)});
        std::cout << "scaling: size " << size << " epochs " << report.epochs_run << " rouge1 "
                  << scores.rouge1_mean.f1 << "\n";
    }
    write_text_file((fs::path(cfg.out) / "scaling.csv").string(), csv.str());
    write_text_file((fs::path(cfg.out) / "config.json").string(), cfg.to_json());
    timing.write(cfg.out);
    write_artifacts(cfg.out, {"scaling.csv", "config.json", "timing.log", "data"});
    return 0;
}

int cmd_report(const std::string& run_dir, const std::string& out_path_csv,
               const std::string& out_path_txt) {
    CsvBuilder csv;
    csv.row({"section", "key", "value"});
    std::vector<std::vector<std::string>> rows;
    rows.push_back({"section", "key", "value"});
    bool found = false;

    auto add = [&](const std::string& section, const std::string& key, const std::string& value) {
        csv.row({section, key, value});
        rows.push_back({section, key, value});
    };

    const auto metrics_path = fs::path(run_dir) / "metrics.json";
    if (fs::exists(metrics_path)) {
        found = true;
        auto j = nlohmann::json::parse(read_text_file(metrics_path.string()));
        for (const auto& [key, value] : j.items())
            add("metrics", key, value.is_string() ? value.get<std::string>() : value.dump());
    }
    for (const char* name : {"comparison.csv", "scaling.csv", "loss.csv"}) {
        const auto path = fs::path(run_dir) / name;
        if (!fs::exists(path)) continue;
        found = true;
        const std::string content = read_text_file(path.string());
        // Headline: last data line of the csv against its header.
        std::vector<std::string> lines;
        std::string line;
        for (char c : content) {
            if (c == '\n') {
                if (!line.empty()) lines.push_back(line);
                line.clear();
            } else {
                line.push_back(c);
            }
        }
        if (lines.size() >= 2) {
            add(name, "header", lines.front());
            for (size_t i = 1; i < lines.size(); ++i)
                add(name, "row_" + std::to_string(i), lines[i]);
        }
    }
    if (!found)
        throw ParseError(ParseError::Kind::io,
                         "report: no metrics.json, comparison.csv, scaling.csv or loss.csv in " +
                             run_dir);

    write_text_file(out_path_csv, csv.str());
    write_text_file(out_path_txt, format_table(rows));
    std::cout << format_table(rows);
    return 0;
}

std::string find_config_path(int argc, const char* const* argv) {
    for (int i = 1; i + 1 < argc; ++i)
        if (std::string(argv[i]) == "--config") return argv[i + 1];
    return "";
}

}  // namespace

// ------------------------------------------------------------ entry point

int run_command(int argc, const char* const* argv) {
    kernels::apply_thread_env();

    ExperimentConfig cfg;
    const std::string config_path = find_config_path(argc, argv);
    try {
        if (!config_path.empty()) cfg = ExperimentConfig::from_json(read_text_file(config_path));
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }

    CLI::App app{"tiny_align: desk-scale ASR-to-LLM embedding alignment"};
    app.require_subcommand(1);
    std::string config_file;
    app.add_option("--config", config_file, "JSON experiment config (flags override it)");

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_file, "JSON experiment config (flags override it)");
        sub->add_option("--seed", cfg.seed, "master seed");
        sub->add_option("--out", cfg.out, "output directory");
    };
    auto add_synth_flags = [&](CLI::App* sub) {
        sub->add_option("--pairs", cfg.synth.pairs, "number of train pairs");
        sub->add_option("--eval-pairs", cfg.synth.eval_pairs, "extra eval-split pairs");
        sub->add_option("--regime", cfg.synth.regime, "feature|transformer|generative");
        sub->add_option("--vocab-size", cfg.synth.vocab_size, "toy vocabulary size");
        sub->add_option("--d-l", cfg.synth.d_l, "embedding table dimension");
        sub->add_option("--duration-min", cfg.synth.duration_min, "min utterance seconds");
        sub->add_option("--duration-max", cfg.synth.duration_max, "max utterance seconds");
        sub->add_option("--token-slots", cfg.synth.token_slots, "token grid slots per utterance");
        sub->add_option("--fps", cfg.synth.fps, "feature frames per second");
        sub->add_option("--noise", cfg.synth.noise, "synthetic feature noise sigma");
        sub->add_option("--min-tokens", cfg.synth.min_tokens, "min transcript tokens");
        sub->add_option("--max-tokens", cfg.synth.max_tokens, "max transcript tokens");
        sub->add_option("--d-f", cfg.synth.d_f, "feature-based regime dimension");
        sub->add_option("--fixed-len", cfg.synth.fixed_len, "transformer regime length");
        sub->add_option("--d-t", cfg.synth.d_t, "transformer regime dimension");
        sub->add_option("--d-g-min", cfg.synth.d_g_min, "generative regime min dimension");
        sub->add_option("--d-g-max", cfg.synth.d_g_max, "generative regime max dimension");
    };
    auto add_model_flags = [&](CLI::App* sub) {
        sub->add_option("--hidden", cfg.model.hidden, "projector hidden dimension");
        sub->add_option("--heads", cfg.model.heads, "projector attention heads");
        sub->add_option("--layers", cfg.model.layers, "projector encoder layers");
        sub->add_option("--token-cast", cfg.model.token_cast, "casted token size");
    };
    auto add_train_flags = [&](CLI::App* sub) {
        sub->add_option("--lr0", cfg.train.lr0, "initial learning rate");
        sub->add_option("--max-epochs", cfg.train.max_epochs, "epoch budget");
        sub->add_option("--epsilon", cfg.train.epsilon, "delta-loss convergence threshold");
        sub->add_option("--window", cfg.train.window, "delta-loss window (epochs)");
        sub->add_option("--target-loss", cfg.train.target_loss,
                        "stop when mean loss reaches this (negative disables)");
        sub->add_option("--alpha", cfg.train.alpha, "MSE loss weight");
        sub->add_option("--beta", cfg.train.beta, "cosine loss weight");
    };
    auto add_gen_flags = [&](CLI::App* sub) {
        sub->add_option("--instruction", cfg.instruction, "instruction text (empty disables)");
        sub->add_option("--temperature", cfg.generation.temperature, "0 for greedy");
        sub->add_option("--top-k", cfg.generation.top_k, "top-k sampling cut");
        sub->add_option("--max-len", cfg.generation.max_len, "generation length");
    };

    auto* synth = app.add_subcommand("synth", "build a synthetic dataset directory");
    add_common(synth);
    add_synth_flags(synth);

    auto* train = app.add_subcommand("train", "EmbedLink training of the projector");
    add_common(train);
    add_synth_flags(train);
    add_model_flags(train);
    add_train_flags(train);
    train->add_option("--data", cfg.data, "dataset directory (synthesized when omitted)");

    auto* eval = app.add_subcommand("eval", "dual-path ROUGE evaluation of a checkpoint");
    add_common(eval);
    add_gen_flags(eval);
    std::string checkpoint, split, features_path, approaches = "tiny_align,A1,A2,A3";
    eval->add_option("--data", cfg.data, "dataset directory");
    eval->add_option("--checkpoint", checkpoint, "projector checkpoint")->required();
    eval->add_option("--split", split, "restrict to a manifest split (train|eval)");

    auto* infer = app.add_subcommand("infer", "generate from one feature file");
    add_common(infer);
    add_gen_flags(infer);
    infer->add_option("--data", cfg.data, "dataset directory (vocab + toy LM)");
    infer->add_option("--checkpoint", checkpoint, "projector checkpoint")->required();
    infer->add_option("--features", features_path, "TAF1 feature file")->required();

    auto* baseline = app.add_subcommand("baseline", "compare tiny_align with A1/A2/A3");
    add_common(baseline);
    add_synth_flags(baseline);
    add_model_flags(baseline);
    add_train_flags(baseline);
    add_gen_flags(baseline);
    baseline->add_option("--data", cfg.data, "dataset directory (synthesized when omitted)");
    baseline->add_option("--approaches", approaches, "comma list: tiny_align,A1,A2,A3");
    baseline->add_flag("--mlp-projector", cfg.model.mlp_projector,
                       "use the two-layer MLP projector variant");

    auto* scaling = app.add_subcommand("scaling", "train+eval across nested data sizes");
    add_common(scaling);
    add_synth_flags(scaling);
    add_model_flags(scaling);
    add_train_flags(scaling);
    add_gen_flags(scaling);
    std::vector<int> sizes;
    scaling->add_option("--sizes", sizes, "data sizes, e.g. --sizes 10 50 100")
        ->delimiter(',');

    auto* report = app.add_subcommand("report", "merge run artifacts into a summary table");
    std::string run_dir;
    report->add_option("--run", run_dir, "run directory to summarize")->required();
    add_common(report);

    try {
        app.parse(argc, const_cast<char**>(argv));
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        std::cerr << "run with --help for the flag list\n";
        return 1;
    }

    try {
        if (synth->parsed()) return cmd_synth(cfg);
        if (train->parsed()) return cmd_train(cfg);
        if (eval->parsed()) return cmd_eval(cfg, checkpoint, split);
        if (infer->parsed()) return cmd_infer(cfg, checkpoint, features_path);
        if (baseline->parsed()) return cmd_baseline(cfg, approaches);
        if (scaling->parsed()) return cmd_scaling(cfg, sizes);
        if (report->parsed()) {
            if (cfg.out.empty()) cfg.out = run_dir;
            fs::create_directories(cfg.out);
            return cmd_report(run_dir, (fs::path(cfg.out) / "report.csv").string(),
                              (fs::path(cfg.out) / "report.txt").string());
        }
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}

}  // namespace tinyalign
