#include "m3/harness/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace m3 {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace

ConfigFile ConfigFile::parse(const std::string& text) {
    ConfigFile cf;
    std::istringstream is(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        if (t.front() == '[' && t.back() == ']') {
            section = trim(t.substr(1, t.size() - 2));
            continue;
        }
        std::size_t eq = t.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                        " is not 'key = value'");
        }
        std::string key = trim(t.substr(0, eq));
        std::string value = trim(t.substr(eq + 1));
        if (key.empty()) {
            throw std::invalid_argument("config: empty key at line " + std::to_string(lineno));
        }
        cf.values_[section.empty() ? key : section + "." + key] = value;
    }
    return cf;
}

ConfigFile ConfigFile::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return parse(os.str());
}

std::string ConfigFile::get(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

std::int64_t ConfigFile::get_int(const std::string& key, std::int64_t fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        return std::stoll(it->second);
    } catch (const std::exception&) {
        throw std::invalid_argument("config: " + key + " is not an integer: " + it->second);
    }
}

double ConfigFile::get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        return std::stod(it->second);
    } catch (const std::exception&) {
        throw std::invalid_argument("config: " + key + " is not a number: " + it->second);
    }
}

void ExperimentConfig::validate() const {
    model.validate();
    train.validate();
    roofline.validate();
    if (run_id.empty()) throw std::invalid_argument("config: run_id must be non-empty");
    if (eval_interval < 1) throw std::invalid_argument("config: eval_interval must be >= 1");
    if (counts.train_color < 1 || counts.train_glyph < 1 || counts.test_color < 1 ||
        counts.test_glyph < 1) {
        throw std::invalid_argument("config: dataset counts must be >= 1");
    }
    if (budget < 1) throw std::invalid_argument("config: budget must be >= 1");
}

ExperimentConfig experiment_config_from(const ConfigFile& cf) {
    ExperimentConfig c;
    c.run_id = cf.get("run.id", c.run_id);
    c.model_seed = static_cast<std::uint64_t>(cf.get_int("model.seed", 42));
    c.model.vocab = static_cast<int>(cf.get_int("model.vocab", c.model.vocab));
    c.model.width = static_cast<int>(cf.get_int("model.width", c.model.width));
    c.model.heads = static_cast<int>(cf.get_int("model.heads", c.model.heads));
    c.model.layers = static_cast<int>(cf.get_int("model.layers", c.model.layers));
    c.model.enc_channels = static_cast<int>(cf.get_int("model.enc_channels", c.model.enc_channels));
    c.model.enc_grid = static_cast<int>(cf.get_int("model.enc_grid", c.model.enc_grid));
    c.model.max_seq = static_cast<int>(cf.get_int("model.max_seq", c.model.max_seq));

    std::string mode = cf.get("train.mode", "average-all-scales");
    if (mode == "average-all-scales") {
        c.train.mode = TrainConfig::Mode::AverageAllScales;
    } else if (mode == "random-scale-per-sample") {
        c.train.mode = TrainConfig::Mode::RandomScalePerSample;
    } else {
        throw std::invalid_argument("config: unknown train.mode '" + mode + "'");
    }
    std::string tset = cf.get("train.trainable", "all-params");
    if (tset == "all-params") {
        c.train.trainable = TrainConfig::TrainableSet::AllParams;
    } else if (tset == "encoder-and-projector-only") {
        c.train.trainable = TrainConfig::TrainableSet::EncoderAndProjectorOnly;
    } else {
        throw std::invalid_argument("config: unknown train.trainable '" + tset + "'");
    }
    c.train.step_size = cf.get_double("train.step_size", c.train.step_size);
    c.train.beta1 = cf.get_double("train.beta1", c.train.beta1);
    c.train.beta2 = cf.get_double("train.beta2", c.train.beta2);
    c.train.epsilon = cf.get_double("train.epsilon", c.train.epsilon);
    c.train.batch_size = static_cast<int>(cf.get_int("train.batch_size", c.train.batch_size));
    c.train.steps = static_cast<int>(cf.get_int("train.steps", c.train.steps));
    c.train.phase1_steps = static_cast<int>(cf.get_int("train.phase1_steps", c.train.phase1_steps));
    c.train.seed = static_cast<std::uint64_t>(cf.get_int("train.seed", 0));

    c.data_seed = static_cast<std::uint64_t>(cf.get_int("dataset.seed", 1));
    c.counts.train_color = static_cast<int>(cf.get_int("dataset.train_color", c.counts.train_color));
    c.counts.train_glyph = static_cast<int>(cf.get_int("dataset.train_glyph", c.counts.train_glyph));
    c.counts.test_color = static_cast<int>(cf.get_int("dataset.test_color", c.counts.test_color));
    c.counts.test_glyph = static_cast<int>(cf.get_int("dataset.test_glyph", c.counts.test_glyph));
    c.eval_interval = static_cast<int>(cf.get_int("eval.interval", c.eval_interval));

    RooflineConfig r = roofline_config_from(cf);
    c.roofline = r;
    c.text_tokens = static_cast<int>(cf.get_int("roofline.text_tokens", c.text_tokens));
    std::string table = cf.get("roofline.tokens", "576,144,36,9,1");
    c.roofline_tokens.clear();
    std::istringstream ts(table);
    std::string tok;
    while (std::getline(ts, tok, ',')) c.roofline_tokens.push_back(std::stoi(tok));

    c.budget = static_cast<int>(cf.get_int("budget.total", c.budget));
    c.validate();
    return c;
}

RooflineConfig roofline_config_from(const ConfigFile& cf) {
    RooflineConfig r;
    r.param_count = cf.get_double("roofline.param_count", r.param_count);
    r.layers = static_cast<int>(cf.get_int("roofline.layers", r.layers));
    r.width = static_cast<int>(cf.get_int("roofline.width", r.width));
    r.heads = static_cast<int>(cf.get_int("roofline.heads", r.heads));
    r.bytes_per_param = cf.get_double("roofline.bytes_per_param", r.bytes_per_param);
    r.peak_flops = cf.get_double("roofline.peak_flops", r.peak_flops);
    r.bandwidth = cf.get_double("roofline.bandwidth", r.bandwidth);
    r.activation_mult = cf.get_double("roofline.activation_mult", r.activation_mult);
    r.validate();
    return r;
}

std::string experiment_config_to_text(const ExperimentConfig& c) {
    std::ostringstream os;
    os << "[run]\nid = " << c.run_id << "\n\n";
    os << "[model]\nseed = " << c.model_seed << "\nvocab = " << c.model.vocab
       << "\nwidth = " << c.model.width << "\nheads = " << c.model.heads
       << "\nlayers = " << c.model.layers << "\nenc_channels = " << c.model.enc_channels
       << "\nenc_grid = " << c.model.enc_grid << "\nmax_seq = " << c.model.max_seq << "\n\n";
    os << "[train]\nmode = "
       << (c.train.mode == TrainConfig::Mode::AverageAllScales ? "average-all-scales"
                                                               : "random-scale-per-sample")
       << "\ntrainable = "
       << (c.train.trainable == TrainConfig::TrainableSet::AllParams
               ? "all-params"
               : "encoder-and-projector-only")
       << "\nstep_size = " << c.train.step_size << "\nbeta1 = " << c.train.beta1
       << "\nbeta2 = " << c.train.beta2 << "\nepsilon = " << c.train.epsilon
       << "\nbatch_size = " << c.train.batch_size << "\nsteps = " << c.train.steps
       << "\nphase1_steps = " << c.train.phase1_steps << "\nseed = " << c.train.seed << "\n\n";
    os << "[dataset]\nseed = " << c.data_seed << "\ntrain_color = " << c.counts.train_color
       << "\ntrain_glyph = " << c.counts.train_glyph << "\ntest_color = " << c.counts.test_color
       << "\ntest_glyph = " << c.counts.test_glyph << "\n\n";
    os << "[eval]\ninterval = " << c.eval_interval << "\n\n";
    os << "[roofline]\nparam_count = " << c.roofline.param_count
       << "\nlayers = " << c.roofline.layers << "\nwidth = " << c.roofline.width
       << "\nheads = " << c.roofline.heads << "\nbytes_per_param = " << c.roofline.bytes_per_param
       << "\npeak_flops = " << c.roofline.peak_flops << "\nbandwidth = " << c.roofline.bandwidth
       << "\nactivation_mult = " << c.roofline.activation_mult
       << "\ntext_tokens = " << c.text_tokens << "\ntokens = ";
    for (std::size_t i = 0; i < c.roofline_tokens.size(); ++i) {
        os << (i ? "," : "") << c.roofline_tokens[i];
    }
    os << "\n\n[budget]\ntotal = " << c.budget << "\n";
    return os.str();
}

}  // namespace m3
