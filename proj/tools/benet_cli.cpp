// Command-line surface: generate / train / eval / predict / ablate.
// stdout carries only the declared JSON/CSV payloads; diagnostics go to
// stderr. Exit codes: 0 ok, 2 config error, 3 I/O error, 4 numerical
// divergence, 5 checkpoint corruption.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "benet/config.hpp"
#include "benet/detector.hpp"
#include "benet/png_io.hpp"
#include "benet/synth.hpp"
#include "benet/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace benet;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitDiverged = 4;
constexpr int kExitCheckpoint = 5;

void ensure_output_dir(const fs::path& out, bool force) {
    std::error_code ec;
    if (fs::exists(out, ec) && !fs::is_empty(out, ec) && !force)
        throw DataError("output directory is not empty (use --force): " + out.string());
    fs::create_directories(out, ec);
    if (ec) throw DataError("cannot create output directory: " + out.string());
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot write " + path.string());
    f << text;
}

std::string hash_string(uint64_t h) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

RunConfig load_run_config(const std::string& config_file,
                          const std::vector<std::string>& overrides) {
    RunConfig cfg = parse_config_file(config_file);
    for (const auto& o : overrides) apply_override(cfg, o);
    return cfg;
}

json epoch_log_json(const EpochLog& e) {
    return json{{"epoch", e.epoch},
                {"l1", e.loss.l1},
                {"l2", e.loss.l2},
                {"l3", e.loss.l3},
                {"l_be", e.loss.l_be},
                {"l_c", e.loss.l_c},
                {"total", e.loss.total},
                {"val_acc", e.val_acc},
                {"val_auc", e.val_auc}};
}

int cmd_generate(const std::string& spec_file, const std::string& out, bool force) {
    RunConfig cfg = load_run_config(spec_file, {});
    cfg.data.validate();
    ensure_output_dir(out, force);
    synth::write_dataset(cfg.data, out);
    std::cerr << "dataset written to " << out << "\n";
    return kExitOk;
}

int cmd_train(const std::string& config_file, const std::string& data_dir,
              const std::string& out, const std::string& arm_override, int64_t seed_override,
              const std::vector<std::string>& overrides, bool force) {
    RunConfig cfg = load_run_config(config_file, overrides);
    if (!arm_override.empty()) cfg.train.arm = arm_from_name(arm_override);
    if (seed_override >= 0) {
        cfg.train.seed = static_cast<uint64_t>(seed_override);
        cfg.model.seed = cfg.train.seed;
    }
    cfg.validate();
    if (!fs::exists(data_dir)) throw DataError("dataset directory not found: " + data_dir);
    synth::Dataset data = synth::load_dataset(data_dir);
    ensure_output_dir(out, force);
    write_text(fs::path(out) / "config.resolved", resolved_text(cfg));

    std::ofstream log(fs::path(out) / "train_log.jsonl");
    if (!log) throw DataError("cannot write training log in " + out);
    auto on_epoch = [&](const EpochLog& e) {
        log << epoch_log_json(e).dump() << "\n";
        log.flush();
        std::cerr << "epoch " << e.epoch << " total=" << e.loss.total
                  << " val_auc=" << e.val_auc << "\n";
    };

    try {
        Checkpoint ckpt = train(cfg.model, cfg.loss, cfg.train, data, on_epoch);
        save_checkpoint(ckpt, out);
    } catch (const NumericalError& e) {
        json diag{{"error", "divergence"}, {"detail", e.what()}};
        write_text(fs::path(out) / "diverged.json", diag.dump(2) + "\n");
        throw;
    }
    std::cerr << "checkpoint written to " << out << "\n";
    return kExitOk;
}

int cmd_eval(const std::string& checkpoint_dir, const std::string& data_dir,
             const std::string& split, const std::string& family) {
    Checkpoint ckpt = load_checkpoint(checkpoint_dir);
    if (!fs::exists(data_dir)) throw DataError("dataset directory not found: " + data_dir);
    synth::Dataset data = synth::load_dataset(data_dir);
    if (!family.empty()) synth::family_from_name(family);  // validate
    auto samples = filter_family(data.split(synth::split_from_name(split)), family);
    if (samples.empty()) throw InvalidInputError("no samples in split '" + split + "'");

    BENet model = ckpt.instantiate();
    EvalResult ev =
        evaluate(model, arm_spec(ckpt.train_config.arm), ckpt.detector, samples,
                 ckpt.train_config.batch_size);

    json out{{"acc", ev.report.acc},
             {"auc", ev.report.auc},
             {"apcer", ev.report.apcer},
             {"bpcer", ev.report.bpcer},
             {"n_real", ev.report.n_real},
             {"n_fake", ev.report.n_fake},
             {"route_counts", ev.report.route_counts},
             {"threshold_used", ev.report.threshold_used},
             {"config_hash", hash_string(ckpt.config_hash())},
             {"seed", ckpt.train_config.seed},
             {"split", split},
             {"family", family}};
    std::cout << out.dump() << "\n";
    return kExitOk;
}

int cmd_predict(const std::string& checkpoint_dir, const std::string& image_file) {
    Checkpoint ckpt = load_checkpoint(checkpoint_dir);
    png_io::Image8 img = png_io::read_png(image_file);
    const ModelConfig& mc = ckpt.model_config;
    if (img.width != mc.image_size || img.height != mc.image_size)
        throw InvalidInputError("image " + image_file + " is " + std::to_string(img.width) +
                                "x" + std::to_string(img.height) + ", model expects " +
                                std::to_string(mc.image_size) + "x" +
                                std::to_string(mc.image_size));
    BENet model = ckpt.instantiate();
    Prediction pr = predict(model, synth::image_to_tensor(img), ckpt.detector);
    json out{{"label", pr.label == 1 ? "fake" : "real"},
             {"score", pr.score},
             {"route", pr.route},
             {"bias_statistic", pr.bias_stat}};
    std::cout << out.dump() << "\n";
    return kExitOk;
}

int cmd_ablate(const std::string& config_file, const std::string& data_dir,
               const std::string& out, int seeds, const std::string& arms_csv, int jobs,
               const std::vector<std::string>& overrides, bool force) {
    RunConfig cfg = load_run_config(config_file, overrides);
    cfg.validate();
    if (seeds < 1) throw ConfigError("--seeds must be >= 1");
    std::vector<uint64_t> seed_list;
    for (int i = 1; i <= seeds; ++i) seed_list.push_back(static_cast<uint64_t>(i));
    std::vector<Arm> arms;
    if (arms_csv.empty()) {
        arms = all_arms();
    } else {
        std::istringstream ss(arms_csv);
        std::string item;
        while (std::getline(ss, item, ',')) arms.push_back(arm_from_name(item));
    }
    if (!fs::exists(data_dir)) throw DataError("dataset directory not found: " + data_dir);
    synth::Dataset data = synth::load_dataset(data_dir);
    ensure_output_dir(out, force);
    write_text(fs::path(out) / "config.resolved", resolved_text(cfg));

    auto on_cell = [](const AblationCell& c) {
        std::cerr << "arm=" << arm_name(c.arm) << " seed=" << c.seed
                  << " intra=" << c.intra_auc << " cross=" << c.cross_mean << "\n";
    };
    AblationResult res =
        run_ablation_matrix(cfg.model, cfg.loss, cfg.train, data, arms, seed_list, jobs, on_cell);

    // Wide CSV: one row per arm, per-seed columns plus means.
    std::ostringstream csv;
    csv << "arm";
    for (uint64_t s : seed_list) csv << ",intra_s" << s;
    csv << ",intra_mean";
    for (uint64_t s : seed_list) csv << ",cross_s" << s;
    csv << ",cross_mean\n";
    for (Arm a : arms) {
        csv << arm_name(a);
        double isum = 0.0, csum = 0.0;
        for (uint64_t s : seed_list) {
            const AblationCell* c = res.find(a, s);
            csv << "," << c->intra_auc;
            isum += c->intra_auc;
        }
        csv << "," << isum / static_cast<double>(seed_list.size());
        for (uint64_t s : seed_list) {
            const AblationCell* c = res.find(a, s);
            csv << "," << c->cross_mean;
            csum += c->cross_mean;
        }
        csv << "," << csum / static_cast<double>(seed_list.size()) << "\n";
    }
    write_text(fs::path(out) / "ablation.csv", csv.str());
    std::cout << csv.str();

    json cells = json::array();
    for (const auto& c : res.cells)
        cells.push_back(json{{"arm", arm_name(c.arm)},
                             {"seed", c.seed},
                             {"intra_auc", c.intra_auc},
                             {"cross_auc", c.cross_auc},
                             {"cross_mean", c.cross_mean},
                             {"val_auc", c.val_auc}});
    json orderings;
    if (!res.chain_ok.empty()) {
        int passing = 0;
        for (size_t i = 0; i < res.chain_ok.size(); ++i)
            if (res.chain_ok[i] && res.gap_ok[i]) ++passing;
        orderings = json{{"chain_full_ge_be_ge_rl_ge_lsa", res.chain_ok},
                         {"gap_full_vs_ae_lsa_ge_0.03", res.gap_ok},
                         {"seeds_passing_both", passing}};
    }
    json summary{{"train_family", cfg.train.train_family.empty()
                      ? synth::family_name(synth::Family::splice)
                      : cfg.train.train_family},
                 {"seeds", seed_list},
                 {"cells", cells},
                 {"orderings", orderings}};
    write_text(fs::path(out) / "summary.json", summary.dump(2) + "\n");
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"bias-expansion network for image forgery detection"};
    app.require_subcommand(1);

    // generate
    auto* gen = app.add_subcommand("generate", "write a synthetic dataset");
    std::string gen_spec, gen_out;
    bool gen_force = false;
    gen->add_option("--spec", gen_spec, "dataset spec file (key = value)")->required();
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_flag("--force", gen_force, "overwrite existing output");

    // train
    auto* tr = app.add_subcommand("train", "train a model");
    std::string tr_config, tr_data, tr_out, tr_arm;
    int64_t tr_seed = -1;
    std::vector<std::string> tr_sets;
    bool tr_force = false;
    tr->add_option("--config", tr_config, "run config file")->required();
    tr->add_option("--data", tr_data, "dataset directory")->required();
    tr->add_option("--out", tr_out, "output directory")->required();
    tr->add_option("--arm", tr_arm, "ablation arm override");
    tr->add_option("--seed", tr_seed, "seed override");
    tr->add_option("--set", tr_sets, "config override key=value (repeatable)");
    tr->add_flag("--force", tr_force, "overwrite existing output");

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint, JSON report on stdout");
    std::string ev_ckpt, ev_data, ev_split = "test", ev_family;
    ev->add_option("--checkpoint", ev_ckpt, "checkpoint directory")->required();
    ev->add_option("--data", ev_data, "dataset directory")->required();
    ev->add_option("--split", ev_split, "train|val|test")->required();
    ev->add_option("--family", ev_family, "restrict fakes to one family");

    // predict
    auto* pr = app.add_subcommand("predict", "classify one image, JSON on stdout");
    std::string pr_ckpt, pr_image;
    pr->add_option("--checkpoint", pr_ckpt, "checkpoint directory")->required();
    pr->add_option("--image", pr_image, "PNG image path")->required();

    // ablate
    auto* ab = app.add_subcommand("ablate", "run the ablation matrix");
    std::string ab_config, ab_data, ab_out, ab_arms;
    int ab_seeds = 3, ab_jobs = 1;
    std::vector<std::string> ab_sets;
    bool ab_force = false;
    ab->add_option("--config", ab_config, "run config file")->required();
    ab->add_option("--data", ab_data, "dataset directory")->required();
    ab->add_option("--out", ab_out, "output directory")->required();
    ab->add_option("--seeds", ab_seeds, "number of seeds (1..N)");
    ab->add_option("--arms", ab_arms, "comma-separated arm subset (default: all)");
    ab->add_option("--jobs", ab_jobs, "parallel training workers");
    ab->add_option("--set", ab_sets, "config override key=value (repeatable)");
    ab->add_flag("--force", ab_force, "overwrite existing output");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return kExitConfig;
    }

    try {
        if (gen->parsed()) return cmd_generate(gen_spec, gen_out, gen_force);
        if (tr->parsed())
            return cmd_train(tr_config, tr_data, tr_out, tr_arm, tr_seed, tr_sets, tr_force);
        if (ev->parsed()) return cmd_eval(ev_ckpt, ev_data, ev_split, ev_family);
        if (pr->parsed()) return cmd_predict(pr_ckpt, pr_image);
        if (ab->parsed())
            return cmd_ablate(ab_config, ab_data, ab_out, ab_seeds, ab_arms, ab_jobs, ab_sets,
                              ab_force);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const InvalidInputError& e) {
        std::cerr << "invalid input: " << e.what() << "\n";
        return kExitConfig;
    } catch (const StateError& e) {
        std::cerr << "state error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << "\n";
        return kExitCheckpoint;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return kExitDiverged;
    } catch (const DataError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return kExitConfig;
}
