#include <cstdlib>
#include <iostream>
#include <malloc.h>

#include "CLI11.hpp"
#include "commands.hpp"

using namespace lvac;

int main(int argc, char** argv)
{
    // Training reallocates large temporaries every step; keep them off mmap.
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);

    cli::Options o;
    if (const char* env = std::getenv("LVAC_SEED")) {
        try {
            o.seed = std::stoull(env);
        } catch (const std::exception&) {
            std::cerr << "error: LVAC_SEED is not an integer\n";
            return 1;
        }
    }

    CLI::App app{"Learned volumetric attribute compression for point clouds"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_config("--config", "", "key=value file; flags override it");

    app.add_option("--seed", o.seed, "Random seed (default LVAC_SEED or 1)");
    app.add_option("-j,--jobs", o.jobs, "Parallel sweep workers")->check(CLI::PositiveNumber);
    app.add_option("-o,--output", o.output, "Output path");
    app.add_option("--kind", o.kind, "sphere-shell | cube-faces | noise-surface")->capture_default_str();
    app.add_option("--depth", o.depth, "Voxel depth for generate")->check(CLI::Range(1, 21))->capture_default_str();
    app.add_option("-L,--level", o.level, "Binary target level")->check(CLI::Range(0, 63))->capture_default_str();
    app.add_option("--cbn", o.cbn, "linear | mlp | pa, or a name such as mlp(35x64x3)")->capture_default_str();
    app.add_option("--hidden", o.hidden, "mlp hidden width")->capture_default_str();
    app.add_option("--channels", o.channels, "Latent channels")->capture_default_str();
    app.add_flag("--no-normalization", o.no_normalization, "Quantize without the RAHT scale (S = I)");
    app.add_flag("--freeze-cbn", o.freeze_cbn, "Keep --cbn-weights fixed during training");
    app.add_option("--cbn-weights", o.cbn_weights, "CBN weight file");
    app.add_option("--init-noise", o.init_noise, "Scale of the initial extra latent channels")->capture_default_str();
    app.add_option("--lambda", o.lambda, "Lagrange multiplier")->capture_default_str();
    app.add_option("--lambda-grid", o.lambda_grid, "Comma separated lambdas")->capture_default_str();
    app.add_option("--steps", o.steps, "Training steps")->check(CLI::NonNegativeNumber)->capture_default_str();
    app.add_option("--lr", o.learning_rate, "Adam learning rate")->capture_default_str();
    app.add_flag("--constant-lr", o.constant_lr, "Disable the cosine learning-rate decay over the second half");
    app.add_option("--checkpoint", o.checkpoint, "Trained state to encode");
    app.add_option("--export-cbn", o.export_cbn, "Also write the trained CBN weights here");
    app.add_flag("--baseline", o.baseline, "RAHT + RLGR at the voxel level");
    app.add_option("--delta", o.delta, "Baseline step exponent: step 2^delta")->capture_default_str();
    app.add_option("--delta-grid", o.delta_grid, "Baseline exponents, lo..hi or a list")->capture_default_str();
    app.add_option("--colorspace", o.colorspace, "rgb | yuv (baseline)")->capture_default_str();
    app.add_option("-B,--bits-per-param", o.bits_per_param, "Side-info bits per CBN parameter")->capture_default_str();
    app.add_flag("--cbn-external", o.cbn_external, "Leave the CBN weights out of the stream");
    app.add_option("--geometry", o.geometry, "PLY holding the decoder-side geometry");
    app.add_option("--raw", o.raw, "Also write reconstructed attributes as little-endian f64");
    app.add_option("--stream-dir", o.stream_dir, "Keep each sweep bitstream here");
    app.add_option("--plot", o.plot, "Write a gnuplot script for the CSV");
    app.add_option("--label", o.label, "Curve label in CSV output");

    std::string input, other;
    auto* generate = app.add_subcommand("generate", "Write a synthetic colored cloud");
    auto* info = app.add_subcommand("info", "Tree, coefficient and parameter counts");
    info->add_option("input", input, "Input PLY")->required();
    auto* train = app.add_subcommand("train", "Train latents and CBN; write a checkpoint");
    train->add_option("input", input, "Input PLY")->required();
    auto* encode = app.add_subcommand("encode", "Write a bitstream");
    encode->add_option("input", input, "Input PLY")->required();
    auto* decode = app.add_subcommand("decode", "Reconstruct a PLY from a bitstream");
    decode->add_option("stream", input, "Bitstream")->required();
    auto* sweep = app.add_subcommand("rd-sweep", "Rate-distortion sweep to CSV");
    sweep->add_option("input", input, "Input PLY")->required();
    auto* ablate = app.add_subcommand("ablate-norm", "Normalized vs S = I sweeps and their BD-rate");
    ablate->add_option("input", input, "Input PLY")->required();
    auto* bd = app.add_subcommand("bd-rate", "BD-rate of curve A against curve B");
    bd->add_option("a", input, "CSV of curve A")->required();
    bd->add_option("b", other, "CSV of curve B")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (sweep->parsed() || ablate->parsed()) {
            const bool lambda_given = app.count("--lambda-grid") > 0;
            const bool delta_given = app.count("--delta-grid") > 0;
            if (lambda_given && delta_given)
                throw UsageError("--lambda-grid and --delta-grid are mutually exclusive");
            if (delta_given && !o.baseline)
                throw UsageError("--delta-grid needs --baseline");
            if (lambda_given && o.baseline)
                throw UsageError("--lambda-grid is for learned sweeps");
        }
        if (o.freeze_cbn && o.cbn_weights.empty())
            throw UsageError("--freeze-cbn requires --cbn-weights");
        if (generate->parsed())
            return cli::cmd_generate(o);
        if (info->parsed())
            return cli::cmd_info(o, input);
        if (train->parsed())
            return cli::cmd_train(o, input);
        if (encode->parsed())
            return cli::cmd_encode(o, input);
        if (decode->parsed())
            return cli::cmd_decode(o, input);
        if (sweep->parsed())
            return cli::cmd_rd_sweep(o, input);
        if (ablate->parsed())
            return cli::cmd_ablate_norm(o, input);
        if (bd->parsed())
            return cli::cmd_bd_rate(input, other);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const DivergenceError& e) {
        std::cerr << "diverged: " << e.what() << "\n";
        return 3;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
