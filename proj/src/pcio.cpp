#include "lvac/pcio.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>

namespace lvac {

std::uint64_t morton_key(const Position& p, int depth)
{
    std::uint64_t key = 0;
    for (int b = depth - 1; b >= 0; --b) {
        key = (key << 3) | (std::uint64_t((p[0] >> b) & 1u) << 2) |
              (std::uint64_t((p[1] >> b) & 1u) << 1) | std::uint64_t((p[2] >> b) & 1u);
    }
    return key;
}

Position morton_decode(std::uint64_t key, int depth)
{
    Position p{0, 0, 0};
    for (int b = 0; b < depth; ++b) {
        const auto triple = static_cast<std::uint32_t>((key >> (3 * b)) & 7u);
        p[0] |= ((triple >> 2) & 1u) << b;
        p[1] |= ((triple >> 1) & 1u) << b;
        p[2] |= (triple & 1u) << b;
    }
    return p;
}

bool VoxelizedPointCloud::operator==(const VoxelizedPointCloud& other) const
{
    return depth == other.depth && positions == other.positions &&
           attributes.rows() == other.attributes.rows() &&
           attributes.cols() == other.attributes.cols() && attributes == other.attributes;
}

VoxelizedPointCloud canonicalize(int depth, std::vector<Position> positions, MatrixXd attributes)
{
    if (depth < 1 || depth > 21)
        throw DataError("voxel depth must be in [1, 21]");
    if (static_cast<std::size_t>(attributes.rows()) != positions.size() ||
        (attributes.rows() > 0 && attributes.cols() != 3))
        throw DataError("attribute count does not match position count");

    const std::uint32_t limit = 1u << depth;
    std::vector<std::uint64_t> keys(positions.size());
    for (std::size_t i = 0; i < positions.size(); ++i) {
        for (int a = 0; a < 3; ++a)
            if (positions[i][a] >= limit)
                throw DataError("coordinate outside [0, 2^depth)");
        keys[i] = morton_key(positions[i], depth);
    }

    std::vector<std::size_t> order(positions.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });

    VoxelizedPointCloud out;
    out.depth = depth;
    std::vector<Eigen::RowVector3d> merged;
    merged.reserve(order.size());
    out.positions.reserve(order.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        Eigen::RowVector3d sum = Eigen::RowVector3d::Zero();
        while (j < order.size() && keys[order[j]] == keys[order[i]]) {
            sum += attributes.row(static_cast<Eigen::Index>(order[j]));
            ++j;
        }
        out.positions.push_back(positions[order[i]]);
        merged.push_back(sum / static_cast<double>(j - i));
        i = j;
    }
    out.attributes.resize(static_cast<Eigen::Index>(merged.size()), 3);
    for (std::size_t i = 0; i < merged.size(); ++i)
        out.attributes.row(static_cast<Eigen::Index>(i)) = merged[i];
    return out;
}

void validate(const VoxelizedPointCloud& cloud)
{
    if (static_cast<std::size_t>(cloud.attributes.rows()) != cloud.positions.size())
        throw DataError("attribute count does not match position count");
    if (!cloud.empty() && cloud.attributes.cols() != 3)
        throw DataError("attributes must have 3 channels");
    const std::uint32_t limit = 1u << cloud.depth;
    std::uint64_t prev = 0;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        for (int a = 0; a < 3; ++a)
            if (cloud.positions[i][a] >= limit)
                throw DataError("coordinate outside [0, 2^depth)");
        const std::uint64_t key = morton_key(cloud.positions[i], cloud.depth);
        if (i > 0 && key <= prev)
            throw DataError("positions are not unique and Morton sorted");
        prev = key;
    }
    if (!cloud.empty() && (cloud.attributes.minCoeff() < 0.0 || cloud.attributes.maxCoeff() > 1.0))
        throw DataError("attribute outside [0,1]");
}

// ---------------------------------------------------------------------------
// PLY

namespace {

enum class PlyType { I8, U8, I16, U16, I32, U32, F32, F64 };

PlyType parse_ply_type(const std::string& t)
{
    if (t == "char" || t == "int8") return PlyType::I8;
    if (t == "uchar" || t == "uint8") return PlyType::U8;
    if (t == "short" || t == "int16") return PlyType::I16;
    if (t == "ushort" || t == "uint16") return PlyType::U16;
    if (t == "int" || t == "int32") return PlyType::I32;
    if (t == "uint" || t == "uint32") return PlyType::U32;
    if (t == "float" || t == "float32") return PlyType::F32;
    if (t == "double" || t == "float64") return PlyType::F64;
    throw DataError("unknown PLY property type '" + t + "'");
}

std::size_t type_size(PlyType t)
{
    switch (t) {
    case PlyType::I8:
    case PlyType::U8: return 1;
    case PlyType::I16:
    case PlyType::U16: return 2;
    case PlyType::I32:
    case PlyType::U32:
    case PlyType::F32: return 4;
    case PlyType::F64: return 8;
    }
    return 0;
}

template <typename T>
T read_le(const unsigned char* p)
{
    T v;
    std::memcpy(&v, p, sizeof(T));
    return v;  // host is little-endian on every supported target
}

double decode_binary(PlyType t, const unsigned char* p)
{
    switch (t) {
    case PlyType::I8: return read_le<std::int8_t>(p);
    case PlyType::U8: return read_le<std::uint8_t>(p);
    case PlyType::I16: return read_le<std::int16_t>(p);
    case PlyType::U16: return read_le<std::uint16_t>(p);
    case PlyType::I32: return read_le<std::int32_t>(p);
    case PlyType::U32: return read_le<std::uint32_t>(p);
    case PlyType::F32: return read_le<float>(p);
    case PlyType::F64: return read_le<double>(p);
    }
    return 0.0;
}

struct PlyProperty {
    std::string name;
    PlyType type = PlyType::F32;
    bool is_list = false;
    PlyType count_type = PlyType::U8;
};

struct PlyElement {
    std::string name;
    std::size_t count = 0;
    std::vector<PlyProperty> properties;
};

class ByteReader {
public:
    explicit ByteReader(std::istream& in) : in_(in) {}

    const unsigned char* take(std::size_t n)
    {
        buf_.resize(n);
        in_.read(reinterpret_cast<char*>(buf_.data()), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n)
            throw DataError("PLY body truncated");
        return buf_.data();
    }

private:
    std::istream& in_;
    std::vector<unsigned char> buf_;
};

}  // namespace

VoxelizedPointCloud load_ply(const std::filesystem::path& path, int depth)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw DataError("cannot open " + path.string());

    std::string line;
    std::getline(in, line);
    if (line.rfind("ply", 0) != 0)
        throw DataError("not a PLY file: " + path.string());

    bool binary = false;
    bool have_format = false;
    std::vector<PlyElement> elements;
    while (true) {
        if (!std::getline(in, line))
            throw DataError("PLY header not terminated");
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        if (word == "end_header")
            break;
        if (word == "format") {
            std::string fmt;
            ls >> fmt;
            if (fmt == "ascii")
                binary = false;
            else if (fmt == "binary_little_endian")
                binary = true;
            else
                throw DataError("unsupported PLY format '" + fmt + "'");
            have_format = true;
        } else if (word == "comment") {
            std::string tag, key;
            int value = 0;
            if (ls >> tag >> key >> value && tag == "lvac" && key == "depth")
                depth = value;
        } else if (word == "element") {
            PlyElement e;
            long long count = -1;
            ls >> e.name >> count;
            if (count < 0)
                throw DataError("malformed PLY element line");
            e.count = static_cast<std::size_t>(count);
            elements.push_back(std::move(e));
        } else if (word == "property") {
            if (elements.empty())
                throw DataError("PLY property before element");
            PlyProperty p;
            std::string t;
            ls >> t;
            if (t == "list") {
                std::string ct, it;
                ls >> ct >> it >> p.name;
                p.is_list = true;
                p.count_type = parse_ply_type(ct);
                p.type = parse_ply_type(it);
            } else {
                p.type = parse_ply_type(t);
                ls >> p.name;
            }
            if (p.name.empty())
                throw DataError("malformed PLY property line");
            elements.back().properties.push_back(p);
        } else if (word == "obj_info" || word.empty()) {
            continue;
        } else {
            throw DataError("malformed PLY header line '" + line + "'");
        }
    }
    if (!have_format)
        throw DataError("PLY header missing format");

    const auto vertex_it = std::find_if(elements.begin(), elements.end(),
                                        [](const PlyElement& e) { return e.name == "vertex"; });
    if (vertex_it == elements.end())
        throw DataError("PLY has no vertex element");

    const char* wanted[6] = {"x", "y", "z", "red", "green", "blue"};
    int column[6];
    for (int k = 0; k < 6; ++k) {
        column[k] = -1;
        for (std::size_t j = 0; j < vertex_it->properties.size(); ++j)
            if (vertex_it->properties[j].name == wanted[k] && !vertex_it->properties[j].is_list)
                column[k] = static_cast<int>(j);
        if (column[k] < 0)
            throw DataError(std::string("PLY vertex missing property '") + wanted[k] + "'");
    }

    std::vector<Position> positions;
    MatrixXd colors(static_cast<Eigen::Index>(vertex_it->count), 3);
    positions.reserve(vertex_it->count);
    const double limit = std::ldexp(1.0, depth);
    std::vector<double> values(vertex_it->properties.size());

    auto store = [&](std::size_t i) {
        Position p;
        for (int a = 0; a < 3; ++a) {
            const double v = std::round(values[static_cast<std::size_t>(column[a])]);
            if (!(v >= 0.0 && v < limit))
                throw DataError("PLY coordinate outside [0, 2^depth)");
            p[a] = static_cast<std::uint32_t>(v);
        }
        positions.push_back(p);
        for (int c = 0; c < 3; ++c) {
            const double v = values[static_cast<std::size_t>(column[3 + c])];
            colors(static_cast<Eigen::Index>(i), c) = std::clamp(v, 0.0, 255.0) / 255.0;
        }
    };

    if (binary) {
        ByteReader reader(in);
        for (auto e = elements.begin(); e != elements.end(); ++e) {
            const bool is_vertex = e == vertex_it;
            for (std::size_t i = 0; i < e->count; ++i) {
                for (std::size_t j = 0; j < e->properties.size(); ++j) {
                    const PlyProperty& p = e->properties[j];
                    if (p.is_list) {
                        const double n = decode_binary(p.count_type, reader.take(type_size(p.count_type)));
                        if (n < 0)
                            throw DataError("negative PLY list length");
                        reader.take(static_cast<std::size_t>(n) * type_size(p.type));
                        continue;
                    }
                    const double v = decode_binary(p.type, reader.take(type_size(p.type)));
                    if (is_vertex)
                        values[j] = v;
                }
                if (is_vertex)
                    store(i);
            }
            if (is_vertex)
                break;
        }
    } else {
        for (auto e = elements.begin(); e != elements.end(); ++e) {
            const bool is_vertex = e == vertex_it;
            for (std::size_t i = 0; i < e->count; ++i) {
                if (!std::getline(in, line))
                    throw DataError("PLY body truncated");
                if (!is_vertex)
                    continue;
                std::istringstream ls(line);
                for (std::size_t j = 0; j < e->properties.size(); ++j) {
                    if (e->properties[j].is_list)
                        throw DataError("list property in PLY vertex element");
                    if (!(ls >> values[j]))
                        throw DataError("malformed PLY vertex line");
                }
                store(i);
            }
            if (is_vertex)
                break;
        }
    }
    return canonicalize(depth, std::move(positions), std::move(colors));
}

void save_ply(const VoxelizedPointCloud& cloud, const std::filesystem::path& path, bool binary)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw DataError("cannot write " + path.string());
    out << "ply\n"
        << "format " << (binary ? "binary_little_endian" : "ascii") << " 1.0\n"
        << "comment lvac depth " << cloud.depth << "\n"
        << "element vertex " << cloud.size() << "\n"
        << "property int x\nproperty int y\nproperty int z\n"
        << "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        << "end_header\n";
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        const std::uint8_t rgb[3] = {to_u8(cloud.attributes(r, 0)), to_u8(cloud.attributes(r, 1)),
                                     to_u8(cloud.attributes(r, 2))};
        if (binary) {
            for (int a = 0; a < 3; ++a) {
                const auto v = static_cast<std::int32_t>(cloud.positions[i][a]);
                out.write(reinterpret_cast<const char*>(&v), sizeof v);
            }
            out.write(reinterpret_cast<const char*>(rgb), 3);
        } else {
            out << cloud.positions[i][0] << ' ' << cloud.positions[i][1] << ' '
                << cloud.positions[i][2] << ' ' << int(rgb[0]) << ' ' << int(rgb[1]) << ' '
                << int(rgb[2]) << '\n';
        }
    }
    if (!out)
        throw DataError("write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Synthetic clouds

std::optional<CloudKind> parse_cloud_kind(std::string_view name)
{
    if (name == "sphere-shell") return CloudKind::SphereShell;
    if (name == "cube-faces") return CloudKind::CubeFaces;
    if (name == "noise-surface") return CloudKind::NoiseSurface;
    return std::nullopt;
}

std::string_view to_string(CloudKind kind)
{
    switch (kind) {
    case CloudKind::SphereShell: return "sphere-shell";
    case CloudKind::CubeFaces: return "cube-faces";
    case CloudKind::NoiseSurface: return "noise-surface";
    }
    return "?";
}

namespace {

// Sum of a few random plane waves per channel, plus a soft-edged stripe
// pattern so that blocks see both ramps and edges.
class ColorField {
public:
    ColorField(Rng& rng, double extent)
    {
        for (auto& ch : waves_)
            for (auto& w : ch) {
                const double cycles = rng.uniform(0.5, 3.0);
                for (auto& d : w.dir)
                    d = rng.normal();
                const double norm = std::sqrt(w.dir[0] * w.dir[0] + w.dir[1] * w.dir[1] + w.dir[2] * w.dir[2]);
                for (auto& d : w.dir)
                    d *= 2.0 * M_PI * cycles / (extent * norm);
                w.phase = rng.uniform(0.0, 2.0 * M_PI);
                w.amp = rng.uniform(0.05, 0.12);
            }
        for (auto& d : stripe_dir_)
            d = rng.normal();
        const double norm = std::sqrt(stripe_dir_[0] * stripe_dir_[0] + stripe_dir_[1] * stripe_dir_[1] +
                                      stripe_dir_[2] * stripe_dir_[2]);
        for (auto& d : stripe_dir_)
            d *= 2.0 * M_PI * 4.0 / (extent * norm);
        for (auto& t : tint_)
            t = rng.uniform(-0.15, 0.15);
    }

    Eigen::RowVector3d operator()(const Position& p) const
    {
        Eigen::RowVector3d c;
        const double stripe =
            std::tanh(3.0 * std::sin(stripe_dir_[0] * p[0] + stripe_dir_[1] * p[1] + stripe_dir_[2] * p[2]));
        for (int ch = 0; ch < 3; ++ch) {
            double v = 0.5 + tint_[ch] * stripe;
            for (const auto& w : waves_[ch])
                v += w.amp * std::sin(w.dir[0] * p[0] + w.dir[1] * p[1] + w.dir[2] * p[2] + w.phase);
            c[ch] = v;
        }
        return c;
    }

private:
    struct Wave {
        double dir[3];
        double phase;
        double amp;
    };
    std::array<std::array<Wave, 3>, 3> waves_;
    double stripe_dir_[3];
    double tint_[3];
};

}  // namespace

VoxelizedPointCloud synthesize_cloud(CloudKind kind, int depth, std::uint64_t seed)
{
    if (depth < 4 || depth > 10)
        throw UsageError("synthetic cloud depth must be in [4, 10]");
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(kind)));
    const int n = 1 << depth;
    std::vector<Position> positions;

    switch (kind) {
    case CloudKind::CubeFaces:
        for (int x = 0; x < n; ++x)
            for (int y = 0; y < n; ++y)
                for (int z = 0; z < n; ++z)
                    if (x == 0 || y == 0 || z == 0 || x == n - 1 || y == n - 1 || z == n - 1)
                        positions.push_back({std::uint32_t(x), std::uint32_t(y), std::uint32_t(z)});
        break;
    case CloudKind::SphereShell: {
        const double c = 0.5 * n + rng.uniform(-0.5, 0.5);
        const double r = 0.14 * n;
        const int lo = std::max(0, static_cast<int>(c - r - 2));
        const int hi = std::min(n - 1, static_cast<int>(c + r + 2));
        for (int x = lo; x <= hi; ++x)
            for (int y = lo; y <= hi; ++y)
                for (int z = lo; z <= hi; ++z) {
                    const double dx = x + 0.5 - c, dy = y + 0.5 - c, dz = z + 0.5 - c;
                    if (std::abs(std::sqrt(dx * dx + dy * dy + dz * dz) - r) < 0.5)
                        positions.push_back({std::uint32_t(x), std::uint32_t(y), std::uint32_t(z)});
                }
        break;
    }
    case CloudKind::NoiseSurface: {
        const int side = std::max(4, n * 7 / 16);
        const int x0 = (n - side) / 2;
        struct Bump {
            double fx, fy, phase, amp;
        };
        std::array<Bump, 4> bumps;
        for (auto& b : bumps) {
            b.fx = 2.0 * M_PI * rng.uniform(0.5, 2.5) / side;
            b.fy = 2.0 * M_PI * rng.uniform(0.5, 2.5) / side;
            b.phase = rng.uniform(0.0, 2.0 * M_PI);
            b.amp = rng.uniform(0.02, 0.05) * n;
        }
        std::vector<int> height(static_cast<std::size_t>(side * side));
        for (int i = 0; i < side; ++i)
            for (int j = 0; j < side; ++j) {
                double h = 0.5 * n;
                for (const auto& b : bumps)
                    h += b.amp * std::sin(b.fx * i + b.phase) * std::cos(b.fy * j - b.phase);
                height[static_cast<std::size_t>(i * side + j)] = std::clamp(static_cast<int>(std::floor(h)), 0, n - 1);
            }
        for (int i = 0; i < side; ++i)
            for (int j = 0; j < side; ++j) {
                const int h = height[static_cast<std::size_t>(i * side + j)];
                int lowest = h;
                const int di[4] = {-1, 1, 0, 0}, dj[4] = {0, 0, -1, 1};
                for (int k = 0; k < 4; ++k) {
                    const int a = i + di[k], b = j + dj[k];
                    if (a >= 0 && a < side && b >= 0 && b < side)
                        lowest = std::min(lowest, height[static_cast<std::size_t>(a * side + b)] + 1);
                }
                for (int z = lowest; z <= h; ++z)
                    positions.push_back({std::uint32_t(x0 + i), std::uint32_t(x0 + j), std::uint32_t(z)});
            }
        break;
    }
    }

    ColorField field(rng, n);
    MatrixXd colors(static_cast<Eigen::Index>(positions.size()), 3);
    for (std::size_t i = 0; i < positions.size(); ++i) {
        const Eigen::RowVector3d c = field(positions[i]);
        for (int ch = 0; ch < 3; ++ch) {
            const double noisy = c[ch] + rng.normal() * (1.5 / 255.0);
            colors(static_cast<Eigen::Index>(i), ch) = to_u8(std::clamp(noisy, 0.0, 1.0)) / 255.0;
        }
    }
    return canonicalize(depth, std::move(positions), std::move(colors));
}

// ---------------------------------------------------------------------------
// BT.709 full range

namespace {

const Eigen::Matrix3d& bt709_forward()
{
    static const Eigen::Matrix3d m = [] {
        constexpr double kr = 0.2126, kb = 0.0722, kg = 1.0 - kr - kb;
        Eigen::Matrix3d f;
        f << kr, kg, kb,
             -0.5 * kr / (1.0 - kb), -0.5 * kg / (1.0 - kb), 0.5,
             0.5, -0.5 * kg / (1.0 - kr), -0.5 * kb / (1.0 - kr);
        return f;
    }();
    return m;
}

}  // namespace

VoxelizedPointCloud rgb_to_yuv_bt709(const VoxelizedPointCloud& cloud)
{
    VoxelizedPointCloud out = cloud;
    out.attributes = cloud.attributes * bt709_forward().transpose();
    out.attributes.col(1).array() += 0.5;
    out.attributes.col(2).array() += 0.5;
    return out;
}

VoxelizedPointCloud yuv_to_rgb_bt709(const VoxelizedPointCloud& cloud)
{
    static const Eigen::Matrix3d inverse = bt709_forward().inverse();
    VoxelizedPointCloud out = cloud;
    MatrixXd yuv = cloud.attributes;
    yuv.col(1).array() -= 0.5;
    yuv.col(2).array() -= 0.5;
    out.attributes = yuv * inverse.transpose();
    return out;
}

}  // namespace lvac
