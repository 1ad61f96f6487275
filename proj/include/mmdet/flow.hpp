#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mmdet {

// Dense per-pixel 2-D motion for one frame pair.
struct FlowField {
    int width = 0;
    int height = 0;
    // interleaved (u, v), row-major
    std::vector<double> uv;

    FlowField() = default;
    FlowField(int w, int h) : width(w), height(h), uv(static_cast<std::size_t>(w) * h * 2, 0.0) {}

    double& u(int x, int y) { return uv[2 * (static_cast<std::size_t>(y) * width + x)]; }
    double& v(int x, int y) { return uv[2 * (static_cast<std::size_t>(y) * width + x) + 1]; }
    double u(int x, int y) const { return uv[2 * (static_cast<std::size_t>(y) * width + x)]; }
    double v(int x, int y) const { return uv[2 * (static_cast<std::size_t>(y) * width + x) + 1]; }
};

struct Box {
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

// Per-frame person boxes for one video.
using PersonBoxes = std::vector<std::vector<Box>>;

struct MotionVector {
    double u = 0, v = 0;
    int x = -1, y = -1;  // pixel provenance
};

using MotionVectorSet = std::vector<MotionVector>;

// Middlebury .flo: float 202021.25 magic, int32 width/height, float32 (u,v) pairs.
FlowField read_flo(const std::filesystem::path& path);
void write_flo(const FlowField& field, const std::filesystem::path& path);

// Pixel-center containment, inclusive bounds; overlapping boxes counted once.
struct SegmentedMotion {
    MotionVectorSet foreground;
    MotionVectorSet background;
};
SegmentedMotion segment_motion(const FlowField& field, const std::vector<Box>& boxes);

PersonBoxes read_boxes_json(const std::filesystem::path& path);
void write_boxes_json(const PersonBoxes& boxes, const std::filesystem::path& path);

}  // namespace mmdet
