#include "mmdet/flow.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace mmdet {

namespace {

constexpr float kFloMagic = 202021.25f;

[[noreturn]] void fail(const std::filesystem::path& p, const std::string& what) {
    throw std::runtime_error(p.string() + ": " + what);
}

}  // namespace

FlowField read_flo(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(path, "cannot open");
    float magic = 0.0f;
    in.read(reinterpret_cast<char*>(&magic), 4);
    if (!in || magic != kFloMagic) fail(path, "bad .flo magic");
    std::int32_t w = 0, h = 0;
    in.read(reinterpret_cast<char*>(&w), 4);
    in.read(reinterpret_cast<char*>(&h), 4);
    if (!in) fail(path, "truncated .flo header");
    if (w <= 0 || h <= 0) fail(path, "nonpositive .flo dimensions");
    FlowField f(w, h);
    std::vector<float> buf(static_cast<std::size_t>(w) * h * 2);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
    if (static_cast<std::size_t>(in.gcount()) != buf.size() * 4) fail(path, "truncated .flo payload");
    for (std::size_t i = 0; i < buf.size(); ++i) f.uv[i] = static_cast<double>(buf[i]);
    return f;
}

void write_flo(const FlowField& field, const std::filesystem::path& path) {
    for (double v : field.uv)
        if (!std::isfinite(v)) fail(path, "refusing to write non-finite flow");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(path, "cannot open for write");
    const float magic = kFloMagic;
    const std::int32_t w = field.width, h = field.height;
    out.write(reinterpret_cast<const char*>(&magic), 4);
    out.write(reinterpret_cast<const char*>(&w), 4);
    out.write(reinterpret_cast<const char*>(&h), 4);
    std::vector<float> buf(field.uv.size());
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(field.uv[i]);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
    if (!out) fail(path, "write failed");
}

SegmentedMotion segment_motion(const FlowField& field, const std::vector<Box>& boxes) {
    SegmentedMotion out;
    for (int y = 0; y < field.height; ++y)
        for (int x = 0; x < field.width; ++x) {
            bool fg = false;
            for (const Box& b : boxes)
                if (x >= b.x0 && x <= b.x1 && y >= b.y0 && y <= b.y1) {
                    fg = true;
                    break;
                }
            MotionVector mv{field.u(x, y), field.v(x, y), x, y};
            (fg ? out.foreground : out.background).push_back(mv);
        }
    return out;
}

PersonBoxes read_boxes_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(path, "cannot open");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        fail(path, std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_array()) fail(path, "boxes document must be an array indexed by frame");
    PersonBoxes boxes;
    for (const auto& frame : j) {
        if (!frame.is_array()) fail(path, "each frame entry must be an array of boxes");
        std::vector<Box> fb;
        for (const auto& b : frame) {
            if (!b.is_array() || b.size() != 4) fail(path, "each box must be [x0,y0,x1,y1]");
            fb.push_back(Box{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()});
        }
        boxes.push_back(std::move(fb));
    }
    return boxes;
}

void write_boxes_json(const PersonBoxes& boxes, const std::filesystem::path& path) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& frame : boxes) {
        nlohmann::json fj = nlohmann::json::array();
        for (const Box& b : frame) fj.push_back({b.x0, b.y0, b.x1, b.y1});
        j.push_back(std::move(fj));
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(path, "cannot open for write");
    out << j.dump(2) << '\n';
}

}  // namespace mmdet
