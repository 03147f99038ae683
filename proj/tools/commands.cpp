#include "commands.hpp"

#include <atomic>
#include <charconv>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <thread>

#include "lvac/serialize.hpp"

namespace lvac::cli {

namespace fs = std::filesystem;

std::vector<double> parse_grid(const std::string& text)
{
    std::vector<double> out;
    if (const auto dots = text.find(".."); dots != std::string::npos) {
        int lo = 0, hi = 0;
        const std::string a = text.substr(0, dots), b = text.substr(dots + 2);
        const auto ra = std::from_chars(a.data(), a.data() + a.size(), lo);
        const auto rb = std::from_chars(b.data(), b.data() + b.size(), hi);
        if (ra.ec != std::errc{} || rb.ec != std::errc{} || ra.ptr != a.data() + a.size() ||
            rb.ptr != b.data() + b.size() || hi < lo)
            throw UsageError("bad range: " + text);
        for (int v = lo; v <= hi; ++v)
            out.push_back(v);
        return out;
    }
    std::size_t start = 0;
    while (start <= text.size()) {
        const auto comma = text.find(',', start);
        const std::string item = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size())
                throw std::invalid_argument(item);
        } catch (const std::logic_error&) {
            throw UsageError("bad grid value: '" + item + "'");
        }
        if (comma == std::string::npos)
            break;
        start = comma + 1;
    }
    return out;
}

CbnSpec cbn_spec(const Options& o)
{
    const auto spec = parse_cbn(o.cbn, o.hidden, o.channels);
    if (!spec)
        throw UsageError("unknown CBN family: " + o.cbn);
    spec->validate();
    return *spec;
}

namespace {

std::optional<CbnParams> load_weights(const std::string& path)
{
    if (path.empty())
        return std::nullopt;
    return decode_cbn_params(read_file(path));
}

VoxelizedPointCloud load_cloud(const std::string& path) { return load_ply(path); }

void require_output(const Options& o)
{
    if (o.output.empty())
        throw UsageError("an output path is required (-o)");
}

SideInfoPolicy policy(const Options& o)
{
    SideInfoPolicy p;
    p.bits_per_parameter = o.bits_per_param;
    p.validate();
    return p;
}

void write_raw(const MatrixXd& attributes, const std::string& path)
{
    ByteWriter w;
    for (Eigen::Index i = 0; i < attributes.rows(); ++i)
        for (Eigen::Index c = 0; c < 3; ++c)
            w.f64(attributes(i, c));
    write_file(path, w.bytes());
}

// Runs `fn(i)` for i in [0, n) on up to `jobs` threads; the first exception
// is rethrown after all workers stop.
template <typename Fn>
void parallel_for(std::size_t n, int jobs, Fn&& fn)
{
    const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, jobs)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i)
            fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(n);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    for (auto& t : pool)
        t.join();
    for (const auto& e : errors)
        if (e)
            std::rethrow_exception(e);
}

std::vector<RdPoint> learned_sweep(const Options& o, const VoxelizedPointCloud& cloud, bool normalized)
{
    const auto lambdas = parse_grid(o.lambda_grid);
    const PartitionTree tree = PartitionTree::build(cloud, o.level);
    Options opt = o;
    opt.no_normalization = !normalized;
    std::vector<RdPoint> points(lambdas.size());
    parallel_for(lambdas.size(), o.jobs, [&](std::size_t i) {
        const TrainConfig cfg = train_config(opt, lambdas[i]);
        const TrainState state = train(cloud, tree, cfg);
        const EncodeResult res = encode(cloud, tree, state, policy(o));
        if (!o.stream_dir.empty()) {
            std::ostringstream name;
            name << (normalized ? "norm" : "flat") << "_" << std::setw(2) << std::setfill('0') << i << ".lvac";
            write_file(fs::path(o.stream_dir) / name.str(), res.bytes);
        }
        RdPoint& p = points[i];
        p.label = o.label.empty() ? (normalized ? "lvac" : "lvac-no-norm") : o.label;
        p.cbn = cbn_spec(o).name();
        p.level = o.level;
        p.lambda_or_delta = lambdas[i];
        p.bits_per_parameter = o.bits_per_param;
        p.bpp = res.bpp;
        p.psnr_rgb = psnr_rgb(cloud, res.reconstruction);
    });
    return points;
}

std::vector<RdPoint> baseline_sweep(const Options& o, const VoxelizedPointCloud& cloud)
{
    const auto exponents = parse_grid(o.delta_grid);
    const PartitionTree tree = PartitionTree::build(cloud, 3 * cloud.depth);
    std::vector<RdPoint> points(exponents.size());
    parallel_for(exponents.size(), o.jobs, [&](std::size_t i) {
        const double delta = std::ldexp(1.0, static_cast<int>(exponents[i]));
        const EncodeResult res = raht_baseline_encode(cloud, tree, delta, colorspace(o));
        if (!o.stream_dir.empty()) {
            std::ostringstream name;
            name << "raht_" << std::setw(2) << std::setfill('0') << i << ".lvac";
            write_file(fs::path(o.stream_dir) / name.str(), res.bytes);
        }
        RdPoint& p = points[i];
        p.label = o.label.empty() ? (o.colorspace == "yuv" ? "raht-rlgr-yuv" : "raht-rlgr-rgb") : o.label;
        p.cbn = "none";
        p.level = tree.target_level();
        p.lambda_or_delta = delta;
        p.bits_per_parameter = 0;
        p.bpp = res.bpp;
        p.psnr_rgb = psnr_rgb(cloud, res.reconstruction);
    });
    return points;
}

void write_plot(const std::string& script, const std::string& csv, const std::vector<std::string>& labels)
{
    std::ofstream out(script);
    if (!out)
        throw DataError("cannot write " + script);
    out << "set datafile separator ','\n"
           "set xlabel 'bits per point'\n"
           "set ylabel 'RGB PSNR (dB)'\n"
           "set key bottom right\n"
           "plot ";
    for (std::size_t i = 0; i < labels.size(); ++i) {
        out << (i ? ", \\\n     " : "") << "'" << csv << "' using (strcol(1) eq '" << labels[i]
            << "' ? $6 : NaN):7 with linespoints title '" << labels[i] << "'";
    }
    out << "\n";
}

}  // namespace

TrainConfig train_config(const Options& o, double lambda)
{
    TrainConfig cfg;
    cfg.lambda = lambda;
    cfg.steps = o.steps;
    cfg.learning_rate = o.learning_rate;
    if (o.constant_lr)
        cfg.decay_start = 1.0;
    cfg.seed = o.seed;
    cfg.target_level = o.level;
    cfg.spec = cbn_spec(o);
    cfg.freeze_cbn = o.freeze_cbn;
    cfg.freeze_normalization = o.no_normalization;
    cfg.init_noise = o.init_noise;
    cfg.cbn_weights = load_weights(o.cbn_weights);
    cfg.validate();
    return cfg;
}

ColorSpace colorspace(const Options& o)
{
    if (o.colorspace == "rgb")
        return ColorSpace::Rgb;
    if (o.colorspace == "yuv")
        return ColorSpace::YuvBt709;
    throw UsageError("colorspace must be rgb or yuv");
}

int cmd_generate(const Options& o)
{
    require_output(o);
    const auto kind = parse_cloud_kind(o.kind);
    if (!kind)
        throw UsageError("unknown cloud kind: " + o.kind);
    const auto cloud = synthesize_cloud(*kind, o.depth, o.seed);
    save_ply(cloud, o.output);
    std::cout << "points: " << cloud.size() << "\n";
    return 0;
}

int cmd_info(const Options& o, const std::string& input)
{
    const auto cloud = load_cloud(input);
    const int L = std::min(o.level, 3 * cloud.depth);
    const auto tree = PartitionTree::build(cloud, L);
    std::cout << "points: " << cloud.size() << "\n"
              << "voxel depth: " << cloud.depth << "\n"
              << "binary levels: " << tree.depth_binary() << "\n"
              << "target level: " << L << "\n"
              << "blocks: " << tree.block_count() << "\n"
              << "coefficients: " << tree.block_count() << "\n";
    const auto levels = coefficient_levels(tree);
    std::vector<std::size_t> per_level(static_cast<std::size_t>(L) + 1, 0);
    for (int l : levels)
        ++per_level[static_cast<std::size_t>(l)];
    std::cout << "coefficients per level:";
    for (int l = 0; l <= L; ++l)
        if (per_level[static_cast<std::size_t>(l)])
            std::cout << " " << l << ":" << per_level[static_cast<std::size_t>(l)];
    std::cout << "\n";
    std::cout << "cbn parameters:\n";
    for (const CbnSpec& spec : {CbnSpec::linear(), CbnSpec::mlp(256, 32), CbnSpec::mlp(64, 32), CbnSpec::pa(32)})
        std::cout << "  " << spec.name() << ": " << param_count(spec) << "\n";
    const CbnSpec chosen = cbn_spec(o);
    const std::size_t coded = tree.coded_levels().size();
    const std::size_t ent = parameter_count(coded, static_cast<std::size_t>(chosen.channels));
    std::cout << "entropy model parameters (" << coded << " levels x " << chosen.channels << " channels): " << ent
              << "\n"
              << "entropy model side info at 32 bits/param: " << std::setprecision(4)
              << 32.0 * static_cast<double>(ent) / static_cast<double>(cloud.size()) << " bpp\n";
    return 0;
}

int cmd_train(const Options& o, const std::string& input)
{
    require_output(o);
    const auto cloud = load_cloud(input);
    const auto tree = PartitionTree::build(cloud, o.level);
    const TrainConfig cfg = train_config(o, o.lambda);
    std::vector<LossTerms> history;
    const TrainState state = train(cloud, tree, cfg, &history);
    save_checkpoint(state, o.output);
    if (!o.export_cbn.empty())
        write_file(o.export_cbn, encode_cbn_params(round_to_f32(state.cbn)));
    if (!history.empty())
        std::cout << std::setprecision(10) << "J: " << history.back().J << "\nD: " << history.back().D
                  << "\nR: " << history.back().R << "\n";
    return 0;
}

int cmd_encode(const Options& o, const std::string& input)
{
    require_output(o);
    const auto cloud = load_cloud(input);
    EncodeResult res;
    if (o.baseline) {
        if (!o.checkpoint.empty())
            throw UsageError("--baseline does not take a checkpoint");
        const auto tree = PartitionTree::build(cloud, 3 * cloud.depth);
        res = raht_baseline_encode(cloud, tree, std::ldexp(1.0, o.delta), colorspace(o));
    } else {
        TrainState state;
        if (!o.checkpoint.empty()) {
            state = load_checkpoint(o.checkpoint);
        } else {
            const auto tree = PartitionTree::build(cloud, o.level);
            state = train(cloud, tree, train_config(o, o.lambda));
        }
        const auto tree = PartitionTree::build(cloud, state.target_level);
        const auto placement = o.cbn_external ? CbnPlacement::External : CbnPlacement::Inline;
        res = encode(cloud, tree, state, policy(o), placement);
        if (!o.export_cbn.empty())
            write_file(o.export_cbn, encode_cbn_params(*res.model.cbn));
    }
    write_file(o.output, res.bytes);
    if (!o.raw.empty())
        write_raw(res.reconstruction.attributes, o.raw);
    std::cout << std::setprecision(17) << "bytes: " << res.bytes.size() << "\nbpp: " << res.bpp
              << "\nfile bpp: " << res.file_bpp << "\npsnr: " << psnr_rgb(cloud, res.reconstruction) << "\n";
    return 0;
}

int cmd_decode(const Options& o, const std::string& stream)
{
    require_output(o);
    if (o.geometry.empty())
        throw UsageError("decode needs the geometry (--geometry cloud.ply)");
    const auto geometry = load_cloud(o.geometry);
    const auto bytes = read_file(stream);
    const StreamHeader header = read_header(bytes);
    if (header.depth != geometry.depth)
        throw DataError("stream and geometry voxel depths differ");
    const auto tree = PartitionTree::build(geometry, header.target_level);
    VoxelizedPointCloud out;
    if (header.baseline()) {
        out = raht_baseline_decode(bytes, tree);
    } else {
        const DecodedModel model = decode(bytes, tree, load_weights(o.cbn_weights));
        out = reconstruct_cloud(model, tree, geometry.positions);
    }
    save_ply(out, o.output);
    if (!o.raw.empty())
        write_raw(out.attributes, o.raw);
    std::cout << "points: " << out.size() << "\n";
    return 0;
}

int cmd_rd_sweep(const Options& o, const std::string& input)
{
    require_output(o);
    const auto cloud = load_cloud(input);
    if (!o.stream_dir.empty())
        fs::create_directories(o.stream_dir);
    const auto points = o.baseline ? baseline_sweep(o, cloud) : learned_sweep(o, cloud, !o.no_normalization);
    write_csv(points, o.output);
    std::cout << format_csv(points);
    if (!o.plot.empty())
        write_plot(o.plot, o.output, {points.front().label});
    return 0;
}

int cmd_ablate_norm(const Options& o, const std::string& input)
{
    require_output(o);
    if (o.baseline)
        throw UsageError("ablate-norm compares learned runs");
    const auto cloud = load_cloud(input);
    if (!o.stream_dir.empty())
        fs::create_directories(o.stream_dir);
    Options opt = o;
    opt.label.clear();
    auto on = learned_sweep(opt, cloud, true);
    const auto off = learned_sweep(opt, cloud, false);
    const double bd = bd_rate(on, off);
    on.insert(on.end(), off.begin(), off.end());
    write_csv(on, o.output);
    std::cout << format_csv(on) << std::fixed << std::setprecision(1) << "bd-rate (normalized vs not): " << bd
              << "%\n";
    if (!o.plot.empty())
        write_plot(o.plot, o.output, {"lvac", "lvac-no-norm"});
    return 0;
}

int cmd_bd_rate(const std::string& a, const std::string& b)
{
    const double bd = bd_rate(read_csv(a), read_csv(b));
    std::cout << std::fixed << std::setprecision(1) << bd << "%\n";
    return 0;
}

}  // namespace lvac::cli
