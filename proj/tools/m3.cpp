// m3: command line front end for the pyramid builder, toy trainer, oracle
// analyzer, roofline cost model, and experiment runner.
#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "m3/roofline.hpp"
#include "m3/scale_analysis.hpp"
#include "m3/tensor_io.hpp"
#include "m3/token_pyramid.hpp"
#include "m3/toy_lmm.hpp"
#include "m3/training.hpp"
#include "m3/harness/config.hpp"
#include "m3/harness/experiment.hpp"
#include "m3/harness/task.hpp"

#include <nlohmann/json.hpp>

namespace {

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for write: " + path);
    out << content;
}

std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    std::istringstream is(s);
    std::string tok;
    while (std::getline(is, tok, ',')) out.push_back(std::stoi(tok));
    return out;
}

m3::ExperimentConfig load_experiment_config(const std::string& path, std::uint64_t seed_override,
                                            bool has_seed) {
    m3::ExperimentConfig cfg = path.empty()
                                   ? m3::ExperimentConfig{}
                                   : m3::experiment_config_from(m3::ConfigFile::load(path));
    if (has_seed) {
        cfg.model_seed = seed_override;
        cfg.train.seed = seed_override;
        cfg.data_seed = seed_override;
    }
    cfg.validate();
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Matryoshka visual-token laboratory"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path, out_dir = ".";
    std::uint64_t seed = 0;
    bool has_seed = false;
    app.add_option("--config", config_path, "experiment config file (key = value sections)");
    app.add_option("--out-dir", out_dir, "output directory for artifacts");
    app.add_option("--seed", seed, "override model/train/dataset seeds")
        ->each([&](const std::string&) { has_seed = true; });

    // pyramid
    auto* cmd_pyramid = app.add_subcommand("pyramid", "build nested token scales from a grid file");
    std::string grid_path;
    bool schedule_only = false;
    cmd_pyramid->add_option("--input", grid_path, "binary grid tensor file")->required();
    cmd_pyramid->add_flag("--schedule-only", schedule_only, "print the schedule as JSON and exit");

    // train
    auto* cmd_train = app.add_subcommand("train", "train the toy model per the config");

    // eval
    auto* cmd_eval = app.add_subcommand("eval", "per-scale evaluation of a checkpoint");
    std::string ckpt_path;
    cmd_eval->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();

    // oracle
    auto* cmd_oracle = app.add_subcommand("oracle", "oracle scale selection over a matrix");
    std::string matrix_path, oracle_out;
    cmd_oracle->add_option("--matrix", matrix_path, "CorrectnessMatrix CSV")->required();
    cmd_oracle->add_option("--out", oracle_out, "write the report JSON here (default stdout)");

    // roofline
    auto* cmd_roofline = app.add_subcommand("roofline", "prefill cost table");
    int tokens = -1, text_tokens = 30;
    std::string table = "576,144,36,9,1";
    cmd_roofline->add_option("--tokens", tokens, "single visual-token count");
    cmd_roofline->add_option("--table", table, "comma list of visual-token counts");
    cmd_roofline->add_option("--text-tokens", text_tokens, "text tokens in the prompt");

    // budget
    auto* cmd_budget = app.add_subcommand("budget", "token budget allocations");
    int budget = 2880;
    std::string sched_str = "1,9,36,144,576";
    cmd_budget->add_option("--budget", budget, "total visual token budget");
    cmd_budget->add_option("--schedule", sched_str, "comma list of schedule sizes");

    // compare
    auto* cmd_compare = app.add_subcommand("compare", "training-free baseline comparison");
    std::string cmp_ckpt, cmp_ks = "1,9,36,144", cmp_split = "all";
    cmd_compare->add_option("--checkpoint", cmp_ckpt, "checkpoint file")->required();
    cmd_compare->add_option("--k", cmp_ks, "comma list of token counts");
    cmd_compare->add_option("--split", cmp_split, "all | global-color | local-glyph");

    // run
    auto* cmd_run = app.add_subcommand("run", "full pipeline: train, eval, oracle, roofline");
    bool dry_run = false, force = false;
    cmd_run->add_flag("--dry-run", dry_run, "validate config and print the plan only");
    cmd_run->add_flag("--force", force, "re-run even if the run id already completed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (cmd_pyramid->parsed()) {
            m3::TokenGrid<float> grid = m3::read_grid(grid_path);
            m3::TokenPyramid<float> pyr = m3::build_pyramid(grid);
            if (schedule_only) {
                std::cout << nlohmann::json(pyr.schedule.sizes).dump() << "\n";
                return 0;
            }
            for (std::size_t i = 0; i < pyr.scales.size(); ++i) {
                m3::write_grid(out_dir + "/scale_" + std::to_string(pyr.schedule.sizes[i]) + ".bin",
                               pyr.scales[i]);
            }
            std::cout << nlohmann::json(pyr.schedule.sizes).dump() << "\n";
        } else if (cmd_train->parsed()) {
            m3::ExperimentConfig cfg = load_experiment_config(config_path, seed, has_seed);
            m3::Dataset ds = m3::generate_dataset(cfg.data_seed, cfg.counts);
            m3::Model<float> model(cfg.model);
            model.init(cfg.model_seed);
            auto data = m3::to_train_samples(ds.train, cfg.model.patch);
            m3::TrainResult<float> tr = m3::train(model, data, cfg.train);
            std::ostringstream loss_csv;
            loss_csv << "step,loss\n";
            for (std::size_t i = 0; i < tr.loss_curve.size(); ++i) {
                loss_csv << (i + 1) << "," << tr.loss_curve[i] << "\n";
            }
            write_text_file(out_dir + "/loss.csv", loss_csv.str());
            m3::save_checkpoint(out_dir + "/checkpoint.bin", tr.model, cfg.model_seed);
            std::cout << "checkpoint written to " << out_dir << "/checkpoint.bin\n";
        } else if (cmd_eval->parsed()) {
            m3::ExperimentConfig cfg = load_experiment_config(config_path, seed, has_seed);
            m3::Model<float> model = m3::load_checkpoint<float>(ckpt_path);
            m3::Dataset ds = m3::generate_dataset(cfg.data_seed, cfg.counts);
            m3::EvalResult ev = m3::evaluate(model, ds.test);
            std::ostringstream acc_csv;
            acc_csv << "scale,accuracy,global_color_accuracy,local_glyph_accuracy\n";
            for (int s = 0; s < ev.matrix.schedule.scales(); ++s) {
                acc_csv << ev.matrix.schedule.sizes[static_cast<std::size_t>(s)] << ","
                        << ev.accuracy[static_cast<std::size_t>(s)] << ","
                        << ev.color_accuracy[static_cast<std::size_t>(s)] << ","
                        << ev.glyph_accuracy[static_cast<std::size_t>(s)] << "\n";
            }
            write_text_file(out_dir + "/accuracy.csv", acc_csv.str());
            write_text_file(out_dir + "/correctness.csv", m3::matrix_to_csv(ev.matrix));
            std::cout << acc_csv.str();
        } else if (cmd_oracle->parsed()) {
            m3::CorrectnessMatrix matrix = m3::matrix_from_csv(read_text_file(matrix_path));
            m3::OracleReport rep = m3::oracle_aggregate(matrix);
            std::string json = m3::report_to_json(rep, matrix);
            if (oracle_out.empty()) {
                std::cout << json << "\n";
            } else {
                write_text_file(oracle_out, json);
            }
        } else if (cmd_roofline->parsed()) {
            m3::RooflineConfig rcfg = config_path.empty()
                                          ? m3::RooflineConfig{}
                                          : m3::roofline_config_from(m3::ConfigFile::load(config_path));
            std::vector<int> counts = tokens >= 0 ? std::vector<int>{tokens}
                                                  : parse_int_list(table);
            std::cout << m3::roofline_csv(rcfg, counts, text_tokens);
        } else if (cmd_budget->parsed()) {
            m3::ScaleSchedule sched{parse_int_list(sched_str)};
            auto allocs = m3::budget_allocations(budget, sched);
            std::cout << "units,tokens_per_unit\n";
            for (const auto& a : allocs) std::cout << a.units << "," << a.tokens_per_unit << "\n";
        } else if (cmd_compare->parsed()) {
            m3::ExperimentConfig cfg = load_experiment_config(config_path, seed, has_seed);
            m3::Model<float> model = m3::load_checkpoint<float>(cmp_ckpt);
            m3::Dataset ds = m3::generate_dataset(cfg.data_seed, cfg.counts);
            std::vector<m3::TaskInstance> subset;
            for (const auto& t : ds.test) {
                if (cmp_split == "all" ||
                    (cmp_split == "global-color" && t.kind == m3::TaskInstance::Kind::GlobalColor) ||
                    (cmp_split == "local-glyph" && t.kind == m3::TaskInstance::Kind::LocalGlyph)) {
                    subset.push_back(t);
                }
            }
            m3::BaselineTable tbl = m3::compare_baselines(model, subset, parse_int_list(cmp_ks));
            std::cout << m3::baseline_table_to_csv(tbl);
        } else if (cmd_run->parsed()) {
            m3::ExperimentConfig cfg = load_experiment_config(config_path, seed, has_seed);
            m3::run_experiment(cfg, out_dir, dry_run, force, std::cout);
        }
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
