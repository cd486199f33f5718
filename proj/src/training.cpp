#include "benet/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "benet/rng.hpp"

namespace benet {

namespace {

using json = nlohmann::json;

uint64_t fnv1a(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace

std::string arm_name(Arm a) {
    switch (a) {
        case Arm::full: return "full";
        case Arm::no_ae: return "no_ae";
        case Arm::ae_no_bias: return "ae_no_bias";
        case Arm::ae: return "ae";
        case Arm::ae_lsa: return "ae_lsa";
        case Arm::ae_lsa_rl: return "ae_lsa_rl";
        case Arm::ae_lsa_be: return "ae_lsa_be";
        case Arm::ae_lsa_cd: return "ae_lsa_cd";
    }
    throw InvariantError("unknown arm enum");
}

Arm arm_from_name(const std::string& name) {
    for (Arm a : all_arms())
        if (arm_name(a) == name) return a;
    throw ConfigError("unknown ablation arm: " + name);
}

const std::vector<Arm>& all_arms() {
    static const std::vector<Arm> arms = {Arm::full,   Arm::no_ae,     Arm::ae_no_bias,
                                          Arm::ae,     Arm::ae_lsa,    Arm::ae_lsa_rl,
                                          Arm::ae_lsa_be, Arm::ae_lsa_cd};
    return arms;
}

ArmSpec arm_spec(Arm a) {
    ArmSpec s;
    const LossSet lc_only{false, false, false, true};
    switch (a) {
        case Arm::full:
            s = {true, true, true, LossSet{true, true, true, true}, true};
            break;
        case Arm::no_ae:
            s = {false, false, false, lc_only, false};
            break;
        case Arm::ae_no_bias:
            s = {true, false, false, lc_only, false};
            break;
        case Arm::ae:
            s = {true, true, false, lc_only, false};
            break;
        case Arm::ae_lsa:
            s = {true, true, true, lc_only, false};
            break;
        case Arm::ae_lsa_rl:
            s = {true, true, true, LossSet{true, false, false, true}, false};
            break;
        case Arm::ae_lsa_be:
            s = {true, true, true, LossSet{true, true, true, true}, false};
            break;
        case Arm::ae_lsa_cd:
            s = {true, true, true, lc_only, true};
            break;
    }
    return s;
}

void TrainConfig::validate() const {
    if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
    if (lr < 0.0) throw ConfigError("train config: lr must be >= 0");
    if (weight_decay < 0.0) throw ConfigError("train config: weight_decay must be >= 0");
    if (epochs < 0) throw ConfigError("train config: epochs must be >= 0");
    if (coverage <= 0.0 || coverage > 1.0)
        throw ConfigError("train config: coverage must be in (0, 1]");
}

ArmForward forward_arm(const BENet& model, const ag::Var& x, const ArmSpec& spec) {
    ArmForward out;
    if (!spec.use_ae) {
        out.v = x;
        out.p = model.classify(out.v);
        return out;
    }
    auto rec = model.reconstruct(x);
    out.x_o = rec.x_o;
    if (!spec.use_bias) {
        out.v = out.x_o;
        out.p = model.classify(out.v);
        return out;
    }
    out.xhat = BENet::compute_bias(x, out.x_o);
    if (!spec.use_lsa) {
        out.v = out.xhat;
        out.p = model.classify(out.v);
        return out;
    }
    auto s = model.lsa_fuse(rec.pyramid);
    auto att = BENet::apply_attention(s, out.xhat);
    out.v = att.v;
    out.p = model.classify(out.v);
    return out;
}

Adam::Adam(double lr, double weight_decay, double beta1, double beta2, double eps)
    : lr_(lr), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(std::vector<ag::Var>& params) {
    if (m_.empty()) {
        m_.reserve(params.size());
        v_.reserve(params.size());
        for (const auto& p : params) {
            m_.push_back(Tensor::zeros(p->val.shape()));
            v_.push_back(Tensor::zeros(p->val.shape()));
        }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < params.size(); ++i) {
        ag::Node& p = *params[i];
        if (!p.has_grad()) continue;  // not part of this arm's graph
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        const int64_t n = p.val.numel();
        for (int64_t j = 0; j < n; ++j) {
            const double g = p.grad[j] + wd_ * p.val[j];
            m[j] = beta1_ * m[j] + (1.0 - beta1_) * g;
            v[j] = beta2_ * v[j] + (1.0 - beta2_) * g * g;
            p.val[j] -= lr_ * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps_);
        }
    }
}

std::vector<synth::Sample> filter_family(const std::vector<synth::Sample>& samples,
                                         const std::string& family) {
    if (family.empty()) return samples;
    std::vector<synth::Sample> out;
    for (const auto& s : samples)
        if (s.label == 0 || s.family == family) out.push_back(s);
    return out;
}

EvalResult evaluate(const BENet& model, const ArmSpec& spec, const DetectorState& det,
                    const std::vector<synth::Sample>& samples, int batch_size) {
    if (samples.empty()) throw InvalidInputError("evaluate: empty sample set");
    ag::NoGradGuard ng;
    EvalResult r;
    std::map<std::string, int64_t> routes;
    const bool reject_path = spec.use_bias && det.calibrated();
    for (size_t start = 0; start < samples.size(); start += static_cast<size_t>(batch_size)) {
        const size_t end = std::min(samples.size(), start + static_cast<size_t>(batch_size));
        std::vector<Tensor> imgs;
        for (size_t i = start; i < end; ++i) imgs.push_back(samples[i].image);
        Tensor batch = stack_batch(imgs);
        model.check_input(batch);
        auto fwd = forward_arm(model, ag::constant(batch), spec);
        std::vector<double> stats;
        if (fwd.xhat) stats = bias_statistics(fwd.xhat->val);
        for (size_t i = start; i < end; ++i) {
            const double p = fwd.p->val[static_cast<int64_t>(i - start)];
            r.labels.push_back(samples[i].label);
            if (reject_path) {
                Prediction pr = decide(p, stats[i - start], det);
                r.predictions.push_back(pr.label);
                r.scores.push_back(pr.score);
                ++routes[pr.route];
            } else {
                r.predictions.push_back(p > 0.5 ? 1 : 0);
                r.scores.push_back(p);
                ++routes["classifier"];
            }
            if (!stats.empty()) r.bias_stats.push_back(stats[i - start]);
        }
    }
    r.report = build_report(r.labels, r.predictions, r.scores);
    r.report.threshold_used = det.calibrated() ? det.tau : 0.5;
    r.report.route_counts = std::move(routes);
    return r;
}

namespace {

// Mean epoch losses, accumulated batch-weighted.
struct LossAccum {
    LossBreakdown sum;
    int64_t batches = 0;
    void add(const LossBreakdown& b) {
        sum.l1 += b.l1;
        sum.l2 += b.l2;
        sum.l3 += b.l3;
        sum.l_be += b.l_be;
        sum.l_c += b.l_c;
        sum.total += b.total;
        ++batches;
    }
    LossBreakdown mean() const {
        LossBreakdown m = sum;
        const double inv = batches > 0 ? 1.0 / static_cast<double>(batches) : 0.0;
        m.l1 *= inv;
        m.l2 *= inv;
        m.l3 *= inv;
        m.l_be *= inv;
        m.l_c *= inv;
        m.total *= inv;
        return m;
    }
};

std::vector<double> collect_bias_stats(const BENet& model, const ArmSpec& spec,
                                       const std::vector<synth::Sample>& samples,
                                       int batch_size, bool reals_only) {
    ag::NoGradGuard ng;
    std::vector<double> stats;
    std::vector<Tensor> imgs;
    auto flush = [&]() {
        if (imgs.empty()) return;
        auto fwd = forward_arm(model, ag::constant(stack_batch(imgs)), spec);
        if (!fwd.xhat) throw InvariantError("detector calibration needs a bias path");
        for (double b : bias_statistics(fwd.xhat->val)) stats.push_back(b);
        imgs.clear();
    };
    for (const auto& s : samples) {
        if (reals_only && s.label != 0) continue;
        imgs.push_back(s.image);
        if (static_cast<int>(imgs.size()) == batch_size) flush();
    }
    flush();
    return stats;
}

}  // namespace

Checkpoint train(const ModelConfig& model_cfg, const LossConfig& loss_cfg,
                 const TrainConfig& train_cfg, const synth::Dataset& data,
                 const EpochCallback& on_epoch) {
    loss_cfg.validate();
    train_cfg.validate();
    ModelConfig mc = model_cfg;
    mc.seed = train_cfg.seed;  // all randomness funnels through the run seed
    mc.validate();
    if (mc.image_size != data.spec.image_size)
        throw ConfigError("model image_size " + std::to_string(mc.image_size) +
                          " does not match dataset image_size " +
                          std::to_string(data.spec.image_size));

    const ArmSpec spec = arm_spec(train_cfg.arm);
    auto train_set = filter_family(data.train, train_cfg.train_family);
    auto val_set = filter_family(data.val, train_cfg.train_family);
    bool has_real = false, has_fake = false;
    for (const auto& s : train_set) (s.label == 1 ? has_fake : has_real) = true;
    if (!has_real || !has_fake)
        throw InvalidInputError("training split needs both classes");

    BENet model(mc);
    Adam opt(train_cfg.lr, train_cfg.weight_decay);

    Checkpoint ckpt;
    ckpt.model_config = mc;
    ckpt.loss_config = loss_cfg;
    ckpt.train_config = train_cfg;
    ckpt.best_epoch = -1;
    ckpt.best_val_auc = -1.0;
    ckpt.params = model.export_parameters();  // epochs == 0 keeps initialization

    for (int epoch = 0; epoch < train_cfg.epochs; ++epoch) {
        Rng erng(mix_seed({train_cfg.seed, 0xE90C4ULL, static_cast<uint64_t>(epoch)}));
        std::vector<size_t> order(train_set.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        shuffle(order, erng);

        LossAccum accum;
        for (size_t start = 0; start < order.size();
             start += static_cast<size_t>(train_cfg.batch_size)) {
            const size_t end =
                std::min(order.size(), start + static_cast<size_t>(train_cfg.batch_size));
            std::vector<Tensor> imgs;
            std::vector<int> labels;
            for (size_t i = start; i < end; ++i) {
                const synth::Sample& s = train_set[order[i]];
                imgs.push_back(train_cfg.augment ? synth::augment(s.image, erng) : s.image);
                labels.push_back(s.label);
            }
            Tensor batch = stack_batch(imgs);
            model.check_input(batch);
            auto fwd = forward_arm(model, ag::constant(batch), spec);
            auto loss = total_loss(fwd.xhat, fwd.p, labels, loss_cfg, spec.losses);
            if (!std::isfinite(loss.values.total)) {
                std::ostringstream os;
                os << "training diverged at epoch " << epoch << " batch "
                   << start / static_cast<size_t>(train_cfg.batch_size)
                   << ": l1=" << loss.values.l1 << " l2=" << loss.values.l2
                   << " l3=" << loss.values.l3 << " l_c=" << loss.values.l_c
                   << " total=" << loss.values.total;
                throw NumericalError(os.str());
            }
            model.clear_grads();
            ag::backward(loss.total);
            opt.step(model.parameters());
            accum.add(loss.values);
        }

        EpochLog log;
        log.epoch = epoch;
        log.loss = accum.mean();
        double val_auc = -1.0, val_acc = 0.0;
        if (!val_set.empty()) {
            try {
                EvalResult ev = evaluate(model, spec, DetectorState::passthrough(), val_set,
                                         train_cfg.batch_size);
                val_auc = ev.report.auc;
                val_acc = ev.report.acc;
            } catch (const InvalidInputError&) {
                val_auc = -1.0;  // single-class validation split: fall back to last epoch
            }
        }
        log.val_acc = val_acc;
        log.val_auc = val_auc;
        ckpt.history.push_back(log);
        if (val_auc >= ckpt.best_val_auc) {
            ckpt.best_val_auc = val_auc;
            ckpt.best_epoch = epoch;
            ckpt.params = model.export_parameters();
        }
        if (on_epoch) on_epoch(log);
    }

    model.import_parameters(ckpt.params);
    if (spec.use_detector) {
        auto stats = collect_bias_stats(model, spec, train_set, train_cfg.batch_size,
                                        train_cfg.calibrate_on_reals_only);
        ckpt.detector = calibrate_threshold(std::move(stats), train_cfg.coverage);
    } else {
        ckpt.detector = DetectorState::passthrough();
    }
    return ckpt;
}

// ---------------------------------------------------------------------------
// checkpoint persistence
// ---------------------------------------------------------------------------

namespace {

constexpr char kParamsMagic[8] = {'B', 'E', 'N', 'E', 'T', 'C', 'K', 'P'};

json loss_cfg_json(const LossConfig& c) {
    return json{{"margin", c.margin},
                {"lambda", c.lambda},
                {"l3_temperature", c.l3_temperature},
                {"l2_printed_sign", c.l2_printed_sign}};
}

json model_cfg_json(const ModelConfig& c) {
    return json{{"image_size", c.image_size},
                {"in_channels", c.in_channels},
                {"num_scales", c.num_scales},
                {"base_channels", c.base_channels},
                {"bottleneck_channels", c.bottleneck_channels},
                {"patch_size", c.patch_size},
                {"mlp_hidden", c.mlp_hidden},
                {"seed", c.seed}};
}

json train_cfg_json(const TrainConfig& c) {
    return json{{"batch_size", c.batch_size},
                {"lr", c.lr},
                {"weight_decay", c.weight_decay},
                {"epochs", c.epochs},
                {"arm", arm_name(c.arm)},
                {"seed", c.seed},
                {"coverage", c.coverage},
                {"calibrate_on_reals_only", c.calibrate_on_reals_only},
                {"augment", c.augment},
                {"train_family", c.train_family}};
}

template <typename T>
void write_pod(std::ofstream& f, const T& v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::ifstream& f, T& v) {
    f.read(reinterpret_cast<char*>(&v), sizeof(T));
}

}  // namespace

uint64_t Checkpoint::config_hash() const {
    json j;
    j["model"] = model_cfg_json(model_config);
    j["loss"] = loss_cfg_json(loss_config);
    j["train"] = train_cfg_json(train_config);
    return fnv1a(j.dump());
}

BENet Checkpoint::instantiate() const {
    BENet model(model_config);
    model.import_parameters(params);
    return model;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create checkpoint dir: " + dir.string());

    {
        std::ofstream f(dir / "params.bin", std::ios::binary);
        if (!f) throw DataError("cannot write " + (dir / "params.bin").string());
        f.write(kParamsMagic, sizeof(kParamsMagic));
        const uint32_t version = 1;
        write_pod(f, version);
        const uint64_t count = ckpt.params.size();
        write_pod(f, count);
        for (const Tensor& t : ckpt.params) {
            const uint32_t ndim = static_cast<uint32_t>(t.ndim());
            write_pod(f, ndim);
            for (int i = 0; i < t.ndim(); ++i) {
                const int64_t d = t.dim(i);
                write_pod(f, d);
            }
            f.write(reinterpret_cast<const char*>(t.ptr()),
                    static_cast<std::streamsize>(t.numel() * sizeof(double)));
        }
        if (!f) throw DataError("short write to " + (dir / "params.bin").string());
    }

    json manifest;
    char hash_buf[32];
    std::snprintf(hash_buf, sizeof(hash_buf), "%016llx",
                  static_cast<unsigned long long>(ckpt.config_hash()));
    manifest["config_hash"] = std::string(hash_buf);
    manifest["arm"] = arm_name(ckpt.train_config.arm);
    manifest["seed"] = ckpt.train_config.seed;
    manifest["epoch"] = ckpt.best_epoch;
    if (std::isfinite(ckpt.detector.tau))
        manifest["tau"] = ckpt.detector.tau;
    else
        manifest["tau"] = nullptr;
    manifest["coverage"] = ckpt.detector.coverage;
    manifest["statistic"] = ckpt.detector.statistic;
    manifest["calibration_size"] = ckpt.detector.calibration_size;
    manifest["best_val_auc"] = ckpt.best_val_auc;
    manifest["model"] = model_cfg_json(ckpt.model_config);
    manifest["loss"] = loss_cfg_json(ckpt.loss_config);
    manifest["train"] = train_cfg_json(ckpt.train_config);
    json hist = json::array();
    for (const EpochLog& e : ckpt.history) {
        hist.push_back(json{{"epoch", e.epoch},
                            {"l1", e.loss.l1},
                            {"l2", e.loss.l2},
                            {"l3", e.loss.l3},
                            {"l_be", e.loss.l_be},
                            {"l_c", e.loss.l_c},
                            {"total", e.loss.total},
                            {"val_acc", e.val_acc},
                            {"val_auc", e.val_auc}});
    }
    manifest["metrics"] = hist;
    std::ofstream mf(dir / "manifest.json");
    if (!mf) throw DataError("cannot write " + (dir / "manifest.json").string());
    mf << manifest.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    const fs::path mpath = dir / "manifest.json";
    std::ifstream mf(mpath);
    if (!mf) throw CheckpointError("missing checkpoint manifest: " + mpath.string());
    json manifest;
    try {
        mf >> manifest;
    } catch (const json::exception& e) {
        throw CheckpointError("corrupt manifest " + mpath.string() + ": " + e.what());
    }

    Checkpoint ckpt;
    try {
        const json& m = manifest.at("model");
        ckpt.model_config.image_size = m.at("image_size").get<int>();
        ckpt.model_config.in_channels = m.at("in_channels").get<int>();
        ckpt.model_config.num_scales = m.at("num_scales").get<int>();
        ckpt.model_config.base_channels = m.at("base_channels").get<int>();
        ckpt.model_config.bottleneck_channels = m.at("bottleneck_channels").get<int>();
        ckpt.model_config.patch_size = m.at("patch_size").get<int>();
        ckpt.model_config.mlp_hidden = m.at("mlp_hidden").get<int>();
        ckpt.model_config.seed = m.at("seed").get<uint64_t>();
        const json& l = manifest.at("loss");
        ckpt.loss_config.margin = l.at("margin").get<double>();
        ckpt.loss_config.lambda = l.at("lambda").get<double>();
        ckpt.loss_config.l3_temperature = l.at("l3_temperature").get<double>();
        ckpt.loss_config.l2_printed_sign = l.at("l2_printed_sign").get<bool>();
        const json& t = manifest.at("train");
        ckpt.train_config.batch_size = t.at("batch_size").get<int>();
        ckpt.train_config.lr = t.at("lr").get<double>();
        ckpt.train_config.weight_decay = t.at("weight_decay").get<double>();
        ckpt.train_config.epochs = t.at("epochs").get<int>();
        ckpt.train_config.arm = arm_from_name(t.at("arm").get<std::string>());
        ckpt.train_config.seed = t.at("seed").get<uint64_t>();
        ckpt.train_config.coverage = t.at("coverage").get<double>();
        ckpt.train_config.calibrate_on_reals_only =
            t.at("calibrate_on_reals_only").get<bool>();
        ckpt.train_config.augment = t.at("augment").get<bool>();
        ckpt.train_config.train_family = t.at("train_family").get<std::string>();
        ckpt.best_epoch = manifest.at("epoch").get<int>();
        ckpt.best_val_auc = manifest.at("best_val_auc").get<double>();
        if (manifest.at("tau").is_null())
            ckpt.detector.tau = std::numeric_limits<double>::infinity();
        else
            ckpt.detector.tau = manifest.at("tau").get<double>();
        ckpt.detector.coverage = manifest.at("coverage").get<double>();
        ckpt.detector.statistic = manifest.at("statistic").get<std::string>();
        ckpt.detector.calibration_size = manifest.at("calibration_size").get<int64_t>();
        for (const auto& e : manifest.at("metrics")) {
            EpochLog log;
            log.epoch = e.at("epoch").get<int>();
            log.loss.l1 = e.at("l1").get<double>();
            log.loss.l2 = e.at("l2").get<double>();
            log.loss.l3 = e.at("l3").get<double>();
            log.loss.l_be = e.at("l_be").get<double>();
            log.loss.l_c = e.at("l_c").get<double>();
            log.loss.total = e.at("total").get<double>();
            log.val_acc = e.at("val_acc").get<double>();
            log.val_auc = e.at("val_auc").get<double>();
            ckpt.history.push_back(log);
        }
    } catch (const json::exception& e) {
        throw CheckpointError("manifest field error in " + mpath.string() + ": " + e.what());
    }

    const fs::path ppath = dir / "params.bin";
    std::ifstream pf(ppath, std::ios::binary);
    if (!pf) throw CheckpointError("missing checkpoint params: " + ppath.string());
    char magic[8];
    pf.read(magic, sizeof(magic));
    if (!pf || std::memcmp(magic, kParamsMagic, sizeof(magic)) != 0)
        throw CheckpointError("corrupt params blob: " + ppath.string());
    uint32_t version = 0;
    read_pod(pf, version);
    if (version != 1) throw CheckpointError("unsupported checkpoint version");
    uint64_t count = 0;
    read_pod(pf, count);
    if (!pf || count > (1ULL << 20)) throw CheckpointError("corrupt params blob: " + ppath.string());
    for (uint64_t i = 0; i < count; ++i) {
        uint32_t ndim = 0;
        read_pod(pf, ndim);
        if (!pf || ndim > 8) throw CheckpointError("corrupt params blob: " + ppath.string());
        std::vector<int64_t> dims(ndim);
        for (uint32_t d = 0; d < ndim; ++d) read_pod(pf, dims[d]);
        const int64_t n = Tensor::numel_of(dims);
        if (!pf || n < 0 || n > (1LL << 28))
            throw CheckpointError("corrupt params blob: " + ppath.string());
        Tensor t(dims);
        pf.read(reinterpret_cast<char*>(t.ptr()),
                static_cast<std::streamsize>(n * sizeof(double)));
        if (!pf) throw CheckpointError("truncated params blob: " + ppath.string());
        ckpt.params.push_back(std::move(t));
    }
    return ckpt;
}

// ---------------------------------------------------------------------------
// ablation matrix
// ---------------------------------------------------------------------------

const AblationCell* AblationResult::find(Arm arm, uint64_t seed) const {
    for (const auto& c : cells)
        if (c.arm == arm && c.seed == seed) return &c;
    return nullptr;
}

AblationResult run_ablation_matrix(const ModelConfig& model_cfg, const LossConfig& loss_cfg,
                                   const TrainConfig& base_cfg, const synth::Dataset& data,
                                   const std::vector<Arm>& arms,
                                   const std::vector<uint64_t>& seeds, int jobs,
                                   const std::function<void(const AblationCell&)>& on_cell) {
    if (arms.empty()) throw InvalidInputError("run_ablation_matrix: no arms requested");
    if (seeds.empty()) throw InvalidInputError("run_ablation_matrix: no seeds requested");
    const std::string train_family =
        base_cfg.train_family.empty() ? synth::family_name(synth::Family::splice)
                                      : base_cfg.train_family;
    std::vector<std::string> eval_families;
    for (synth::Family f : data.spec.families) eval_families.push_back(synth::family_name(f));

    struct Job {
        Arm arm;
        uint64_t seed;
    };
    std::vector<Job> job_list;
    for (Arm a : arms)
        for (uint64_t s : seeds) job_list.push_back({a, s});

    AblationResult result;
    result.arms = arms;
    result.seeds = seeds;
    result.cells.resize(job_list.size());

    std::mutex mu;
    size_t next = 0;
    auto worker = [&]() {
        for (;;) {
            size_t idx;
            {
                std::lock_guard<std::mutex> lock(mu);
                if (next >= job_list.size()) return;
                idx = next++;
            }
            const Job& job = job_list[idx];
            TrainConfig cfg = base_cfg;
            cfg.arm = job.arm;
            cfg.seed = job.seed;
            cfg.train_family = train_family;
            Checkpoint ckpt = train(model_cfg, loss_cfg, cfg, data);
            BENet model = ckpt.instantiate();
            const ArmSpec spec = arm_spec(job.arm);

            AblationCell cell;
            cell.arm = job.arm;
            cell.seed = job.seed;
            cell.val_auc = ckpt.best_val_auc;
            double cross_sum = 0.0;
            int cross_n = 0;
            for (const std::string& fam : eval_families) {
                auto subset = filter_family(data.test, fam);
                EvalResult ev =
                    evaluate(model, spec, ckpt.detector, subset, cfg.batch_size);
                if (fam == train_family) {
                    cell.intra_auc = ev.report.auc;
                    if (!ev.bias_stats.empty()) {
                        double fake = 0.0, real = 0.0;
                        int64_t nf = 0, nr = 0;
                        for (size_t i = 0; i < ev.labels.size(); ++i) {
                            if (ev.labels[i] == 1) {
                                fake += ev.bias_stats[i];
                                ++nf;
                            } else {
                                real += ev.bias_stats[i];
                                ++nr;
                            }
                        }
                        cell.test_fake_bias = nf > 0 ? fake / static_cast<double>(nf) : 0.0;
                        cell.test_real_bias = nr > 0 ? real / static_cast<double>(nr) : 0.0;
                    }
                } else {
                    cell.cross_auc[fam] = ev.report.auc;
                    cross_sum += ev.report.auc;
                    ++cross_n;
                }
            }
            cell.cross_mean = cross_n > 0 ? cross_sum / cross_n : 0.0;
            {
                auto val_subset = filter_family(data.val, train_family);
                if (!val_subset.empty()) {
                    EvalResult ev =
                        evaluate(model, spec, ckpt.detector, val_subset, cfg.batch_size);
                    cell.val_pipeline_auc = ev.report.auc;
                }
            }
            {
                std::lock_guard<std::mutex> lock(mu);
                result.cells[idx] = cell;
                if (on_cell) on_cell(cell);
            }
        }
    };

    const int n_workers = std::max(1, std::min<int>(jobs, static_cast<int>(job_list.size())));
    if (n_workers == 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        for (int i = 0; i < n_workers; ++i) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }

    // Acceptance orderings on mean cross-family AUC, when the chain arms ran.
    auto has_arm = [&](Arm a) {
        return std::find(arms.begin(), arms.end(), a) != arms.end();
    };
    if (has_arm(Arm::full) && has_arm(Arm::ae_lsa_be) && has_arm(Arm::ae_lsa_rl) &&
        has_arm(Arm::ae_lsa)) {
        for (uint64_t s : seeds) {
            const double full = result.find(Arm::full, s)->cross_mean;
            const double be = result.find(Arm::ae_lsa_be, s)->cross_mean;
            const double rl = result.find(Arm::ae_lsa_rl, s)->cross_mean;
            const double lsa = result.find(Arm::ae_lsa, s)->cross_mean;
            result.chain_ok.push_back(full >= be && be >= rl && rl >= lsa);
            result.gap_ok.push_back(full - lsa >= 0.03);
        }
    }
    return result;
}

}  // namespace benet
