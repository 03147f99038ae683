#pragma once

#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "lvac/pcio.hpp"

namespace lvac {

struct RdPoint {
    std::string label;
    std::string cbn;
    int level = 0;
    double lambda_or_delta = 0.0;
    int bits_per_parameter = 0;
    double bpp = 0.0;
    double psnr_rgb = 0.0;  // +inf for a lossless reconstruction

    bool operator==(const RdPoint&) const = default;
};

inline constexpr double kLosslessPsnr = std::numeric_limits<double>::infinity();

// 10 log10(255^2 / MSE), MSE over all points and the three channels on the
// 255 scale.
double psnr_rgb(const VoxelizedPointCloud& original, const VoxelizedPointCloud& reconstructed);
double psnr_from_sse(double sse01, std::size_t points);

// Average rate difference of A relative to B in percent over the common
// PSNR interval, from cubic fits of ln(rate) against PSNR. Negative means
// A needs fewer bits.
double bd_rate(const std::vector<RdPoint>& a, const std::vector<RdPoint>& b);

// Upper concave hull in (bpp, PSNR), sorted by bpp, keeping only points
// that raise PSNR.
std::vector<RdPoint> convex_hull(const std::vector<RdPoint>& points);

// Columns: label,cbn,level,lambda_or_delta,B,bpp,psnr_rgb.
std::string format_csv(const std::vector<RdPoint>& points);
void write_csv(const std::vector<RdPoint>& points, const std::filesystem::path& path);
std::vector<RdPoint> read_csv(const std::filesystem::path& path);
std::vector<RdPoint> parse_csv(const std::string& text);

}  // namespace lvac
