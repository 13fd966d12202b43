#include "koala/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "koala/errors.hpp"

namespace koala {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::size_t parse_size(const std::string& key, const std::string& v) {
    try {
        const long long x = std::stoll(v);
        if (x < 0) throw ConfigError(key + ": must be non-negative");
        return static_cast<std::size_t>(x);
    } catch (const ConfigError&) {
        throw;
    } catch (...) {
        throw ConfigError(key + ": not an integer: " + v);
    }
}

long parse_long(const std::string& key, const std::string& v) {
    try {
        return std::stol(v);
    } catch (...) {
        throw ConfigError(key + ": not an integer: " + v);
    }
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        return std::stod(v);
    } catch (...) {
        throw ConfigError(key + ": not a number: " + v);
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError(key + ": not a boolean: " + v);
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        return std::stoull(v);
    } catch (...) {
        throw ConfigError(key + ": not an unsigned integer: " + v);
    }
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& schema() {
    static const std::map<std::string, Setter> s = {
        {"model.n", [](RunConfig& c, const std::string& k, const std::string& v) { c.N = parse_size(k, v); }},
        {"model.d", [](RunConfig& c, const std::string& k, const std::string& v) { c.D = parse_size(k, v); }},
        {"model.df", [](RunConfig& c, const std::string& k, const std::string& v) { c.Df = parse_size(k, v); }},
        {"model.t_key", [](RunConfig& c, const std::string& k, const std::string& v) { c.T_key = parse_size(k, v); }},
        {"model.s", [](RunConfig& c, const std::string& k, const std::string& v) { c.S = parse_size(k, v); }},
        {"model.t_seg", [](RunConfig& c, const std::string& k, const std::string& v) { c.T_seg = parse_size(k, v); }},
        {"model.l", [](RunConfig& c, const std::string& k, const std::string& v) { c.L = parse_size(k, v); }},
        {"model.heads", [](RunConfig& c, const std::string& k, const std::string& v) { c.heads = parse_size(k, v); }},
        {"model.vocab", [](RunConfig& c, const std::string& k, const std::string& v) { c.vocab = parse_size(k, v); }},
        {"model.p", [](RunConfig& c, const std::string& k, const std::string& v) { c.P = parse_size(k, v); }},
        {"model.d_in", [](RunConfig& c, const std::string& k, const std::string& v) { c.D_in = parse_size(k, v); }},
        {"model.s_max", [](RunConfig& c, const std::string& k, const std::string& v) { c.S_max = parse_size(k, v); }},
        {"model.t_max", [](RunConfig& c, const std::string& k, const std::string& v) { c.T_max = parse_size(k, v); }},
        {"model.lm_layers", [](RunConfig& c, const std::string& k, const std::string& v) { c.lm_layers = parse_size(k, v); }},
        {"model.ctx_max", [](RunConfig& c, const std::string& k, const std::string& v) { c.ctx_max = parse_size(k, v); }},
        {"model.actions", [](RunConfig& c, const std::string& k, const std::string& v) { c.actions = parse_size(k, v); }},
        {"model.sigma_f", [](RunConfig& c, const std::string& k, const std::string& v) { c.sigma_f = parse_double(k, v); }},
        {"model.ffn_mult", [](RunConfig& c, const std::string& k, const std::string& v) { c.ffn_mult = parse_double(k, v); }},
        {"model.keep_zkey_output", [](RunConfig& c, const std::string& k, const std::string& v) { c.flags.keep_zkey_output = parse_bool(k, v); }},
        {"model.condition_on_zkey", [](RunConfig& c, const std::string& k, const std::string& v) { c.flags.condition_on_zkey = parse_bool(k, v); }},
        {"model.temporal_concept_queries", [](RunConfig& c, const std::string& k, const std::string& v) { c.flags.temporal_concept_queries = parse_bool(k, v); }},
        {"model.enable_cs", [](RunConfig& c, const std::string& k, const std::string& v) { c.flags.enable_cs = parse_bool(k, v); }},
        {"model.enable_cv", [](RunConfig& c, const std::string& k, const std::string& v) { c.flags.enable_cv = parse_bool(k, v); }},
        {"model.mem_short_cap", [](RunConfig& c, const std::string& k, const std::string& v) { c.mem_short_cap = parse_size(k, v); }},
        {"model.mem_long_cap", [](RunConfig& c, const std::string& k, const std::string& v) { c.mem_long_cap = parse_size(k, v); }},
        {"train.steps", [](RunConfig& c, const std::string& k, const std::string& v) { c.steps = parse_long(k, v); }},
        {"train.lr", [](RunConfig& c, const std::string& k, const std::string& v) { c.lr = parse_double(k, v); }},
        {"train.warmup_frac", [](RunConfig& c, const std::string& k, const std::string& v) { c.warmup_frac = parse_double(k, v); }},
        {"train.weight_decay", [](RunConfig& c, const std::string& k, const std::string& v) { c.weight_decay = parse_double(k, v); }},
        {"train.stage0_steps", [](RunConfig& c, const std::string& k, const std::string& v) { c.stage0_steps = parse_long(k, v); }},
        {"train.stage0_lr", [](RunConfig& c, const std::string& k, const std::string& v) { c.stage0_lr = parse_double(k, v); }},
        {"train.log_every", [](RunConfig& c, const std::string& k, const std::string& v) { c.log_every = parse_long(k, v); }},
        {"data.dir", [](RunConfig& c, const std::string&, const std::string& v) { c.data_dir = v; }},
        {"data.train_videos", [](RunConfig& c, const std::string& k, const std::string& v) { c.train_videos = parse_size(k, v); }},
        {"data.val_videos", [](RunConfig& c, const std::string& k, const std::string& v) { c.val_videos = parse_size(k, v); }},
        {"data.test_videos", [](RunConfig& c, const std::string& k, const std::string& v) { c.test_videos = parse_size(k, v); }},
        {"data.video_length", [](RunConfig& c, const std::string& k, const std::string& v) { c.video_length = parse_size(k, v); }},
        {"data.twin_pairs", [](RunConfig& c, const std::string& k, const std::string& v) { c.twin_pairs = parse_size(k, v); }},
        {"data.twin_train_copies", [](RunConfig& c, const std::string& k, const std::string& v) { c.twin_train_copies = parse_size(k, v); }},
        {"data.short_videos", [](RunConfig& c, const std::string& k, const std::string& v) { c.short_videos = parse_size(k, v); }},
        {"data.short_val_videos", [](RunConfig& c, const std::string& k, const std::string& v) { c.short_val_videos = parse_size(k, v); }},
        {"data.tau", [](RunConfig& c, const std::string& k, const std::string& v) { c.tau = parse_double(k, v); }},
        {"data.filter_samples", [](RunConfig& c, const std::string& k, const std::string& v) { c.filter_samples = parse_size(k, v); }},
        {"eval.aggregation", [](RunConfig& c, const std::string&, const std::string& v) { c.aggregation = v; }},
        {"eval.mode", [](RunConfig& c, const std::string&, const std::string& v) { c.eval_mode = v; }},
        {"eval.score_length_norm", [](RunConfig& c, const std::string& k, const std::string& v) { c.score_length_norm = parse_bool(k, v); }},
        {"seed", [](RunConfig& c, const std::string& k, const std::string& v) { c.seed = parse_u64(k, v); }},
        // bare alias matching the variant-selection key name
        {"aggregation", [](RunConfig& c, const std::string&, const std::string& v) { c.aggregation = v; }},
    };
    return s;
}

} // namespace

void RunConfig::validate() const {
    auto require = [](bool ok, const std::string& msg) {
        if (!ok) throw ConfigError("config: " + msg);
    };
    require(N > 0 && D > 0 && Df > 0 && T_key > 0 && S > 0 && T_seg > 0, "dims must be positive");
    require(heads > 0 && D % heads == 0, "model.d must be divisible by model.heads");
    require(Df % heads == 0, "model.df must be divisible by model.heads");
    require(P > 0 && D_in > 0, "model.p / model.d_in must be positive");
    require(T_max >= T_key, "model.t_max must cover model.t_key");
    require(T_max >= T_seg, "model.t_max must cover model.t_seg");
    require(S_max >= S, "model.s_max must cover model.s");
    require(actions >= 2, "model.actions must be at least 2");
    require(sigma_f >= 0.0, "model.sigma_f must be non-negative");
    require(steps > 0 && stage0_steps > 0, "train step budgets must be positive");
    require(warmup_frac >= 0.0 && warmup_frac < 1.0, "train.warmup_frac must be in [0,1)");
    require(video_length >= S * T_seg, "data.video_length too short for the segment grid");
    require(video_length >= T_key, "data.video_length too short for the key-frame grid");
    require(tau >= 0.0 && tau <= 1.0, "data.tau must be in [0,1]");
    require(aggregation == "koala" || aggregation == "base" || aggregation == "average" ||
                aggregation == "concat" || aggregation == "memory",
            "aggregation must be one of koala|base|average|concat|memory");
    require(eval_mode == "full" || eval_mode == "base_only" || eval_mode == "no_visual",
            "eval.mode must be one of full|base_only|no_visual");
    // The frozen aggregator consumes width-D token inputs in the conditioned
    // video pass, so frame features must share that width.
    if (flags.enable_cv)
        require(D_in == D, "model.d_in must equal model.d when model.enable_cv is on");
}

RunConfig parse_config_text(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        auto it = schema().find(key);
        if (it == schema().end())
            throw ConfigError("config line " + std::to_string(lineno) + ": unknown key " + key);
        it->second(cfg, key, value);
    }
    cfg.validate();
    return cfg;
}

RunConfig parse_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw InputError("config: cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_config_text(ss.str());
}

void write_config_file(const RunConfig& cfg, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw InputError("config: cannot write " + path);
    f << "model.n = " << cfg.N << "\n"
      << "model.d = " << cfg.D << "\n"
      << "model.df = " << cfg.Df << "\n"
      << "model.t_key = " << cfg.T_key << "\n"
      << "model.s = " << cfg.S << "\n"
      << "model.t_seg = " << cfg.T_seg << "\n"
      << "model.l = " << cfg.L << "\n"
      << "model.heads = " << cfg.heads << "\n"
      << "model.vocab = " << cfg.vocab << "\n"
      << "model.p = " << cfg.P << "\n"
      << "model.d_in = " << cfg.D_in << "\n"
      << "model.s_max = " << cfg.S_max << "\n"
      << "model.t_max = " << cfg.T_max << "\n"
      << "model.lm_layers = " << cfg.lm_layers << "\n"
      << "model.ctx_max = " << cfg.ctx_max << "\n"
      << "model.actions = " << cfg.actions << "\n"
      << "model.sigma_f = " << cfg.sigma_f << "\n"
      << "model.ffn_mult = " << cfg.ffn_mult << "\n"
      << "model.keep_zkey_output = " << (cfg.flags.keep_zkey_output ? "true" : "false") << "\n"
      << "model.condition_on_zkey = " << (cfg.flags.condition_on_zkey ? "true" : "false") << "\n"
      << "model.temporal_concept_queries = "
      << (cfg.flags.temporal_concept_queries ? "true" : "false") << "\n"
      << "model.enable_cs = " << (cfg.flags.enable_cs ? "true" : "false") << "\n"
      << "model.enable_cv = " << (cfg.flags.enable_cv ? "true" : "false") << "\n"
      << "model.mem_short_cap = " << cfg.mem_short_cap << "\n"
      << "model.mem_long_cap = " << cfg.mem_long_cap << "\n"
      << "train.steps = " << cfg.steps << "\n"
      << "train.lr = " << cfg.lr << "\n"
      << "train.warmup_frac = " << cfg.warmup_frac << "\n"
      << "train.weight_decay = " << cfg.weight_decay << "\n"
      << "train.stage0_steps = " << cfg.stage0_steps << "\n"
      << "train.stage0_lr = " << cfg.stage0_lr << "\n"
      << "train.log_every = " << cfg.log_every << "\n"
      << "data.dir = " << cfg.data_dir << "\n"
      << "data.train_videos = " << cfg.train_videos << "\n"
      << "data.val_videos = " << cfg.val_videos << "\n"
      << "data.test_videos = " << cfg.test_videos << "\n"
      << "data.video_length = " << cfg.video_length << "\n"
      << "data.twin_pairs = " << cfg.twin_pairs << "\n"
      << "data.twin_train_copies = " << cfg.twin_train_copies << "\n"
      << "data.short_videos = " << cfg.short_videos << "\n"
      << "data.short_val_videos = " << cfg.short_val_videos << "\n"
      << "data.tau = " << cfg.tau << "\n"
      << "data.filter_samples = " << cfg.filter_samples << "\n"
      << "eval.aggregation = " << cfg.aggregation << "\n"
      << "eval.mode = " << cfg.eval_mode << "\n"
      << "eval.score_length_norm = " << (cfg.score_length_norm ? "true" : "false") << "\n"
      << "seed = " << cfg.seed << "\n";
}

} // namespace koala
