#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lvac/codec.hpp"
#include "lvac/metrics.hpp"

namespace lvac::cli {

struct Options {
    std::uint64_t seed = 1;
    int jobs = 1;
    std::string output;

    // generate
    std::string kind = "noise-surface";
    int depth = 8;

    // model
    int level = 24;
    std::string cbn = "mlp";
    int hidden = 64;
    int channels = 32;
    bool no_normalization = false;
    bool freeze_cbn = false;
    bool constant_lr = false;
    std::string cbn_weights;
    double init_noise = 0.01;

    // training
    double lambda = 1e-3;
    std::string lambda_grid = "1e-4,3e-4,1e-3,3e-3,1e-2,3e-2,1e-1";
    int steps = 3000;
    double learning_rate = 0.01;
    std::string checkpoint;
    std::string export_cbn;

    // coding
    bool baseline = false;
    int delta = 0;  // baseline step 2^delta
    std::string delta_grid = "0..10";
    std::string colorspace = "rgb";
    int bits_per_param = 0;
    bool cbn_external = false;
    std::string geometry;
    std::string raw;
    std::string stream_dir;
    std::string plot;
    std::string label;
};

// "a,b,c" or "lo..hi" (integers, inclusive).
std::vector<double> parse_grid(const std::string& text);

CbnSpec cbn_spec(const Options& o);
TrainConfig train_config(const Options& o, double lambda);
ColorSpace colorspace(const Options& o);

// Each returns the process exit code.
int cmd_generate(const Options& o);
int cmd_info(const Options& o, const std::string& input);
int cmd_train(const Options& o, const std::string& input);
int cmd_encode(const Options& o, const std::string& input);
int cmd_decode(const Options& o, const std::string& stream);
int cmd_rd_sweep(const Options& o, const std::string& input);
int cmd_ablate_norm(const Options& o, const std::string& input);
int cmd_bd_rate(const std::string& a, const std::string& b);

}  // namespace lvac::cli
