#pragma once

#include <cstdint>
#include <string>

namespace koala {

// Table-5 style model toggles. Defaults reproduce the full model.
struct AblationFlags {
    bool keep_zkey_output = false;
    bool condition_on_zkey = true;
    bool temporal_concept_queries = true;
    bool enable_cs = true;
    bool enable_cv = true;
};

// Full run configuration. Plain key=value file with dotted section prefixes
// (model., train., data., eval.); unknown keys are rejected.
struct RunConfig {
    // model dims
    std::size_t N = 8;        // query tokens per bank
    std::size_t D = 32;       // visual token width
    std::size_t Df = 48;      // LM token width
    std::size_t T_key = 8;    // key frames per video
    std::size_t S = 4;        // segments per video
    std::size_t T_seg = 8;    // frames per segment
    std::size_t L = 2;        // qformer layers
    std::size_t heads = 4;
    std::size_t vocab = 0;    // 0 = derive from the builtin word list
    std::size_t P = 4;        // patches per frame
    std::size_t D_in = 32;    // frame feature width
    std::size_t S_max = 4;    // capacity of the temporal query bank
    std::size_t T_max = 8;    // temporal position table length
    std::size_t lm_layers = 2;
    std::size_t ctx_max = 160; // LM position table length
    std::size_t actions = 17; // latent action vocabulary (id 0 is the filler)
    double sigma_f = 0.05;    // frame noise amplitude
    double ffn_mult = 2.0;

    AblationFlags flags;

    // memory-module baseline capacities (0 = N for the long store)
    std::size_t mem_short_cap = 2;
    std::size_t mem_long_cap = 0;

    // train
    long steps = 2000;
    double lr = 1e-2;
    double warmup_frac = 0.1;
    double weight_decay = 0.02;
    long stage0_steps = 3000;
    double stage0_lr = 3e-3;
    long log_every = 50;

    // data
    std::string data_dir = "data";
    std::size_t train_videos = 512;
    std::size_t val_videos = 64;
    std::size_t test_videos = 64;
    std::size_t video_length = 320;
    std::size_t twin_pairs = 64;
    std::size_t twin_train_copies = 2;
    std::size_t short_videos = 256;
    std::size_t short_val_videos = 64;
    double tau = 0.26;            // similarity threshold
    std::size_t filter_samples = 128;

    // eval
    std::string aggregation = "koala"; // koala|base|average|concat|memory
    std::string eval_mode = "full";    // full|base_only|no_visual
    bool score_length_norm = false;

    std::uint64_t seed = 1;

    std::size_t mem_long_cap_effective() const { return mem_long_cap == 0 ? N : mem_long_cap; }

    // Paper-scale dims are encodable but far beyond what a desk run handles.
    bool paper_scale() const { return D >= 256 || Df >= 1024 || N >= 32; }

    void validate() const;
};

RunConfig parse_config_file(const std::string& path);
RunConfig parse_config_text(const std::string& text);
void write_config_file(const RunConfig& cfg, const std::string& path);

} // namespace koala
