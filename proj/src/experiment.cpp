#include "m3/harness/experiment.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <functional>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace m3 {

namespace fs = std::filesystem;

std::string sha256_hex(const void* data, std::size_t n) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx, data, n) != 1 || EVP_DigestFinal_ex(ctx, digest, &len) != 1) {
        EVP_MD_CTX_free(ctx);
        throw std::runtime_error("sha256_hex: digest failure");
    }
    EVP_MD_CTX_free(ctx);
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) {
        os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
    }
    return os.str();
}

std::string sha256_hex(const std::string& s) { return sha256_hex(s.data(), s.size()); }

std::vector<TrainSample<float>> to_train_samples(const std::vector<TaskInstance>& instances,
                                                 int patch) {
    std::vector<TrainSample<float>> out;
    out.reserve(instances.size());
    for (const TaskInstance& t : instances) {
        out.push_back({rasterize(t.image, patch), t.question, t.answer});
    }
    return out;
}

namespace {

bool decode_matches(const Model<float>& model, const Model<float>::Mat& prefix,
                    const TaskInstance& inst) {
    std::vector<int> got = generate(model, prefix, inst.question,
                                    static_cast<int>(inst.answer.size()), vocab::kEos);
    return got == inst.answer;
}

std::string timestamp_utc() {
    auto now = std::chrono::system_clock::now();
    std::time_t tt = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&tt, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

std::string file_sha256(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("file_sha256: cannot open " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return sha256_hex(os.str());
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for write: " + path);
    out << content;
    if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace

EvalResult evaluate(const Model<float>& model, const std::vector<TaskInstance>& instances) {
    if (instances.empty()) throw std::invalid_argument("evaluate: no instances");
    EvalResult res;
    std::vector<int> color_total_per_scale, glyph_total_per_scale;
    bool first = true;
    std::vector<double> color_correct, glyph_correct;
    int n_color = 0, n_glyph = 0;
    for (const TaskInstance& inst : instances) {
        TokenGrid<float> pixels = rasterize(inst.image, model.cfg.patch);
        TokenGrid<float> enc = encode_image(model, pixels);
        TokenPyramid<float> pyr = build_pyramid(enc);
        if (first) {
            res.matrix.schedule = pyr.schedule;
            const std::size_t m = pyr.scales.size();
            res.accuracy.assign(m, 0.0);
            color_correct.assign(m, 0.0);
            glyph_correct.assign(m, 0.0);
            first = false;
        }
        std::vector<bool> row;
        for (std::size_t s = 0; s < pyr.scales.size(); ++s) {
            bool ok = decode_matches(model, grid_to_mat(pyr.scales[s]), inst);
            row.push_back(ok);
            if (ok) {
                res.accuracy[s] += 1.0;
                (inst.kind == TaskInstance::Kind::GlobalColor ? color_correct : glyph_correct)[s] +=
                    1.0;
            }
        }
        (inst.kind == TaskInstance::Kind::GlobalColor ? n_color : n_glyph) += 1;
        res.matrix.sample_ids.push_back(inst.id);
        res.matrix.rows.push_back(std::move(row));
    }
    for (double& a : res.accuracy) a /= static_cast<double>(instances.size());
    res.color_accuracy = color_correct;
    res.glyph_accuracy = glyph_correct;
    for (double& a : res.color_accuracy) a /= std::max(1, n_color);
    for (double& a : res.glyph_accuracy) a /= std::max(1, n_glyph);
    return res;
}

Model<float>::Mat method_prefix(const TokenGrid<float>& enc_grid, PrefixMethod method, int k) {
    switch (method) {
        case PrefixMethod::M3Pyramid: {
            TokenPyramid<float> pyr = build_pyramid(enc_grid);
            int idx = pyr.schedule.index_of(k);
            if (idx < 0) {
                throw std::invalid_argument("method_prefix: k=" + std::to_string(k) +
                                            " not in schedule");
            }
            return grid_to_mat(pyr.scales[static_cast<std::size_t>(idx)]);
        }
        case PrefixMethod::AveragePool:
            return grid_to_mat(inference_pool(enc_grid, k));
        case PrefixMethod::SpatialSampling:
            return grid_to_mat(spatial_sample(enc_grid, k));
        case PrefixMethod::SequentialSampling:
            return seq_to_mat(sequential_sample(enc_grid, k));
    }
    throw std::invalid_argument("method_prefix: unknown method");
}

double method_accuracy(const Model<float>& model, const std::vector<TaskInstance>& instances,
                       PrefixMethod method, int k) {
    if (instances.empty()) throw std::invalid_argument("method_accuracy: no instances");
    int correct = 0;
    for (const TaskInstance& inst : instances) {
        TokenGrid<float> enc = encode_image(model, rasterize(inst.image, model.cfg.patch));
        if (decode_matches(model, method_prefix(enc, method, k), inst)) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(instances.size());
}

BaselineTable compare_baselines(const Model<float>& model,
                                const std::vector<TaskInstance>& instances,
                                const std::vector<int>& ks) {
    BaselineTable table;
    table.ks = ks;
    const std::pair<std::string, PrefixMethod> methods[] = {
        {"m3", PrefixMethod::M3Pyramid},
        {"average_pooling", PrefixMethod::AveragePool},
        {"spatial_sampling", PrefixMethod::SpatialSampling},
        {"sequential_sampling", PrefixMethod::SequentialSampling}};
    for (const auto& [name, method] : methods) {
        std::vector<double> row;
        for (int k : ks) row.push_back(method_accuracy(model, instances, method, k));
        table.rows.emplace_back(name, std::move(row));
    }
    return table;
}

std::string baseline_table_to_csv(const BaselineTable& table) {
    std::ostringstream os;
    os << "method";
    for (int k : table.ks) os << "," << k;
    os << "\n";
    for (const auto& [name, row] : table.rows) {
        os << name;
        for (double a : row) os << "," << a;
        os << "\n";
    }
    return os.str();
}

std::string roofline_csv(const RooflineConfig& cfg, const std::vector<int>& visual_tokens,
                         int text_tokens) {
    std::ostringstream os;
    os << "visual_tokens,flops_tflop,prefill_time_ms,total_memory_gb,activation_gb\n";
    for (int v : visual_tokens) {
        const std::int64_t n = v + text_tokens;
        CostReport r = cost_report(cfg, n);
        os << v << "," << r.flops / 1e12 << "," << r.prefill_seconds * 1e3 << ","
           << r.total_bytes / 1e9 << "," << r.activation_bytes / 1e9 << "\n";
    }
    return os.str();
}

namespace {

class RunLog {
public:
    RunLog(const std::string& path, std::string run_id, std::string config_hash)
        : path_(path), run_id_(std::move(run_id)), config_hash_(std::move(config_hash)) {}

    void event(const std::string& what, const std::string& stage = "",
               const nlohmann::json& extra = nlohmann::json::object()) {
        nlohmann::json j = extra;
        j["run_id"] = run_id_;
        j["event"] = what;
        if (!stage.empty()) j["stage"] = stage;
        j["config_hash"] = config_hash_;
        j["timestamp"] = timestamp_utc();
        std::ofstream out(path_, std::ios::app);
        if (!out) throw std::runtime_error("run log: cannot append to " + path_);
        out << j.dump() << "\n";
    }

private:
    std::string path_;
    std::string run_id_;
    std::string config_hash_;
};

bool run_already_completed(const std::string& log_path, const std::string& run_id) {
    std::ifstream in(log_path);
    if (!in) return false;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded()) continue;
        if (j.value("run_id", "") == run_id && j.value("event", "") == "completed") return true;
    }
    return false;
}

}  // namespace

void run_experiment(const ExperimentConfig& cfg, const std::string& out_dir, bool dry_run,
                    bool force, std::ostream& out) {
    cfg.validate();
    const std::string config_text = experiment_config_to_text(cfg);
    const std::string config_hash = sha256_hex(config_text);
    const std::string log_path = out_dir + "/run_log.jsonl";

    const std::vector<std::string> stages = {"pyramid", "train", "evaluate", "oracle", "roofline",
                                             "compare"};
    if (dry_run) {
        nlohmann::json plan = {{"run_id", cfg.run_id},
                               {"config_hash", config_hash},
                               {"out_dir", out_dir},
                               {"stages", stages},
                               {"dry_run", true}};
        out << plan.dump(2) << "\n";
        return;
    }
    if (!force && run_already_completed(log_path, cfg.run_id)) {
        throw std::invalid_argument("run_experiment: run id '" + cfg.run_id +
                                    "' already completed in " + log_path +
                                    " (use --force to re-run)");
    }
    fs::create_directories(out_dir);
    write_file(out_dir + "/config.txt", config_text);
    RunLog log(log_path, cfg.run_id, config_hash);
    log.event("started");

    std::string stage = "pyramid";
    try {
        // stage: dataset generation and the pyramid schedule sanity pass
        log.event("stage_start", stage);
        Dataset ds = generate_dataset(cfg.data_seed, cfg.counts);
        write_file(out_dir + "/dataset.jsonl", dataset_to_jsonl(ds));
        Model<float> model(cfg.model);
        model.init(cfg.model_seed);
        TokenGrid<float> probe(cfg.model.enc_grid, cfg.model.enc_grid, 1);
        ScaleSchedule schedule = build_pyramid(probe).schedule;
        log.event("stage_done", stage, {{"schedule", schedule.sizes}});

        // stage: training with periodic per-scale accuracy on an eval subset
        stage = "train";
        log.event("stage_start", stage);
        std::vector<TrainSample<float>> train_data = to_train_samples(ds.train, cfg.model.patch);
        // balanced probe subset: up to 64 instances of each question kind
        std::vector<TaskInstance> eval_subset;
        int n_color_probe = 0, n_glyph_probe = 0;
        for (const TaskInstance& t : ds.test) {
            int& n = t.kind == TaskInstance::Kind::GlobalColor ? n_color_probe : n_glyph_probe;
            if (n >= 64) continue;
            ++n;
            eval_subset.push_back(t);
        }
        std::ostringstream loss_csv;
        loss_csv << "step,loss";
        for (int s : schedule.sizes) loss_csv << ",acc_" << s;
        loss_csv << "\n";
        std::map<int, std::vector<double>> interval_acc;
        std::function<void(int, const Model<float>&)> callback =
            [&](int step, const Model<float>& m) {
                interval_acc[step] = evaluate(m, eval_subset).accuracy;
            };
        TrainResult<float> tr = train(model, train_data, cfg.train, callback, cfg.eval_interval);
        for (std::size_t i = 0; i < tr.loss_curve.size(); ++i) {
            loss_csv << (i + 1) << "," << tr.loss_curve[i];
            auto it = interval_acc.find(static_cast<int>(i + 1));
            for (int s = 0; s < schedule.scales(); ++s) {
                loss_csv << ",";
                if (it != interval_acc.end()) loss_csv << it->second[static_cast<std::size_t>(s)];
            }
            loss_csv << "\n";
        }
        write_file(out_dir + "/loss.csv", loss_csv.str());
        save_checkpoint(out_dir + "/checkpoint.bin", tr.model, cfg.model_seed);
        const std::string ckpt_hash = file_sha256(out_dir + "/checkpoint.bin");
        log.event("stage_done", stage, {{"checkpoint_hash", ckpt_hash}});

        // stage: full test-set evaluation
        stage = "evaluate";
        log.event("stage_start", stage);
        EvalResult ev = evaluate(tr.model, ds.test);
        std::ostringstream acc_csv;
        acc_csv << "scale,accuracy,global_color_accuracy,local_glyph_accuracy\n";
        for (int s = 0; s < schedule.scales(); ++s) {
            acc_csv << schedule.sizes[static_cast<std::size_t>(s)] << ","
                    << ev.accuracy[static_cast<std::size_t>(s)] << ","
                    << ev.color_accuracy[static_cast<std::size_t>(s)] << ","
                    << ev.glyph_accuracy[static_cast<std::size_t>(s)] << "\n";
        }
        write_file(out_dir + "/accuracy.csv", acc_csv.str());
        write_file(out_dir + "/correctness.csv", matrix_to_csv(ev.matrix));
        log.event("stage_done", stage);

        // stage: oracle analysis
        stage = "oracle";
        log.event("stage_start", stage);
        OracleReport rep = oracle_aggregate(ev.matrix);
        write_file(out_dir + "/oracle.json", report_to_json(rep, ev.matrix));
        log.event("stage_done", stage,
                  {{"mean_tokens", rep.mean_tokens}, {"oracle_accuracy", rep.oracle_accuracy}});

        // stage: roofline table
        stage = "roofline";
        log.event("stage_start", stage);
        write_file(out_dir + "/roofline.csv",
                   roofline_csv(cfg.roofline, cfg.roofline_tokens, cfg.text_tokens));
        log.event("stage_done", stage);

        // stage: training-free baseline comparison at the schedule sizes
        stage = "compare";
        log.event("stage_start", stage);
        BaselineTable table = compare_baselines(tr.model, ds.test, schedule.sizes);
        write_file(out_dir + "/compare.csv", baseline_table_to_csv(table));
        log.event("stage_done", stage);

        log.event("completed", "", {{"checkpoint_hash", ckpt_hash}});
        out << "run " << cfg.run_id << " completed; artifacts in " << out_dir << "\n";
    } catch (const std::exception& e) {
        log.event("failed", stage, {{"error", e.what()}});
        throw std::runtime_error("run_experiment: stage '" + stage + "' failed: " + e.what());
    }
}

}  // namespace m3
