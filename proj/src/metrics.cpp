#include "lvac/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <Eigen/QR>

namespace lvac {

double psnr_from_sse(double sse01, std::size_t points)
{
    if (points == 0)
        throw DataError("PSNR of an empty cloud");
    const double mse = sse01 * 255.0 * 255.0 / (3.0 * static_cast<double>(points));
    if (mse == 0.0)
        return kLosslessPsnr;
    return 10.0 * std::log10(255.0 * 255.0 / mse);
}

double psnr_rgb(const VoxelizedPointCloud& original, const VoxelizedPointCloud& reconstructed)
{
    if (original.size() != reconstructed.size() || original.positions != reconstructed.positions)
        throw DataError("clouds are not aligned");
    return psnr_from_sse((original.attributes - reconstructed.attributes).squaredNorm(), original.size());
}

namespace {

struct Fit {
    Eigen::Vector4d c;  // ln(rate) = c0 + c1 p + c2 p^2 + c3 p^3
    double lo, hi;

    double integral(double a, double b) const
    {
        auto prim = [&](double p) {
            return c[0] * p + c[1] * p * p / 2 + c[2] * p * p * p / 3 + c[3] * p * p * p * p / 4;
        };
        return prim(b) - prim(a);
    }
};

Fit fit_curve(const std::vector<RdPoint>& curve)
{
    std::vector<const RdPoint*> pts;
    for (const RdPoint& p : curve)
        if (std::isfinite(p.psnr_rgb)) {
            if (!(p.bpp > 0.0))
                throw DataError("BD-rate needs positive rates");
            pts.push_back(&p);
        }
    if (pts.size() < 4)
        throw DataError("BD-rate needs at least four finite points per curve");
    Eigen::MatrixXd A(static_cast<Eigen::Index>(pts.size()), 4);
    Eigen::VectorXd y(A.rows());
    Fit f{};
    f.lo = std::numeric_limits<double>::infinity();
    f.hi = -f.lo;
    for (Eigen::Index i = 0; i < A.rows(); ++i) {
        const double p = pts[static_cast<std::size_t>(i)]->psnr_rgb;
        A.row(i) << 1.0, p, p * p, p * p * p;
        y[i] = std::log(pts[static_cast<std::size_t>(i)]->bpp);
        f.lo = std::min(f.lo, p);
        f.hi = std::max(f.hi, p);
    }
    f.c = A.colPivHouseholderQr().solve(y);
    return f;
}

}  // namespace

double bd_rate(const std::vector<RdPoint>& a, const std::vector<RdPoint>& b)
{
    if (a == b)
        return 0.0;
    const Fit fa = fit_curve(a), fb = fit_curve(b);
    const double lo = std::max(fa.lo, fb.lo), hi = std::min(fa.hi, fb.hi);
    if (!(hi > lo))
        throw DataError("RD curves do not overlap in PSNR");
    const double diff = (fa.integral(lo, hi) - fb.integral(lo, hi)) / (hi - lo);
    return (std::exp(diff) - 1.0) * 100.0;
}

std::vector<RdPoint> convex_hull(const std::vector<RdPoint>& points)
{
    if (points.empty())
        throw UsageError("convex hull of no points");
    std::vector<RdPoint> sorted = points;
    std::stable_sort(sorted.begin(), sorted.end(), [](const RdPoint& x, const RdPoint& y) {
        return x.bpp < y.bpp || (x.bpp == y.bpp && x.psnr_rgb > y.psnr_rgb);
    });
    // Upper hull by monotone chain, then drop the tail past the best PSNR.
    std::vector<RdPoint> hull;
    for (const RdPoint& p : sorted) {
        if (!hull.empty() && hull.back().bpp == p.bpp)
            continue;
        while (hull.size() >= 2) {
            const RdPoint& o = hull[hull.size() - 2];
            const RdPoint& q = hull.back();
            const double cross = (q.bpp - o.bpp) * (p.psnr_rgb - o.psnr_rgb) - (q.psnr_rgb - o.psnr_rgb) * (p.bpp - o.bpp);
            if (cross >= 0.0)
                hull.pop_back();
            else
                break;
        }
        hull.push_back(p);
    }
    const auto best = std::max_element(hull.begin(), hull.end(),
                                       [](const RdPoint& x, const RdPoint& y) { return x.psnr_rgb < y.psnr_rgb; });
    hull.erase(best + 1, hull.end());
    return hull;
}

namespace {

std::string format_number(double v)
{
    if (std::isinf(v))
        return v > 0 ? "inf" : "-inf";
    std::ostringstream s;
    s.precision(17);
    s << v;
    return s.str();
}

}  // namespace

std::string format_csv(const std::vector<RdPoint>& points)
{
    std::ostringstream s;
    s << "label,cbn,level,lambda_or_delta,B,bpp,psnr_rgb\n";
    for (const RdPoint& p : points)
        s << p.label << ',' << p.cbn << ',' << p.level << ',' << format_number(p.lambda_or_delta) << ','
          << p.bits_per_parameter << ',' << format_number(p.bpp) << ',' << format_number(p.psnr_rgb) << '\n';
    return s.str();
}

void write_csv(const std::vector<RdPoint>& points, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary);
    out << format_csv(points);
    if (!out)
        throw DataError("cannot write " + path.string());
}

std::vector<RdPoint> parse_csv(const std::string& text)
{
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line.rfind("label,cbn,level", 0) != 0)
        throw DataError("missing RD CSV header");
    std::vector<RdPoint> points;
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        std::vector<std::string> f;
        std::stringstream ls(line);
        for (std::string cell; std::getline(ls, cell, ',');)
            f.push_back(cell);
        if (f.size() != 7)
            throw DataError("malformed RD CSV row: " + line);
        try {
            RdPoint p;
            p.label = f[0];
            p.cbn = f[1];
            p.level = std::stoi(f[2]);
            p.lambda_or_delta = std::stod(f[3]);
            p.bits_per_parameter = std::stoi(f[4]);
            p.bpp = std::stod(f[5]);
            p.psnr_rgb = std::stod(f[6]);
            points.push_back(p);
        } catch (const std::logic_error&) {
            throw DataError("malformed RD CSV row: " + line);
        }
    }
    return points;
}

std::vector<RdPoint> read_csv(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw DataError("cannot open " + path.string());
    std::stringstream s;
    s << in.rdbuf();
    return parse_csv(s.str());
}

}  // namespace lvac
