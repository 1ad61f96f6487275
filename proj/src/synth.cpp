#include "mmdet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>

#include "json.hpp"

namespace mmdet {

namespace {

constexpr int kBlob = 8;
constexpr char kFramesMagic[4] = {'M', 'M', 'F', 'R'};

// class c >= 1 maps to (pattern, direction); the pattern is shared between
// direction pairs so neither modality alone separates the classes
int class_pattern(int c) { return (c - 1) / 2; }

std::pair<double, double> class_direction(int c) {
    return ((c - 1) % 2 == 0) ? std::pair<double, double>{2.0, 0.0} : std::pair<double, double>{0.0, 2.0};
}

}  // namespace

void SynthSpec::validate() const {
    if (num_videos < 1) throw std::invalid_argument("synth: num_videos must be positive");
    if (frames < 1) throw std::invalid_argument("synth: frames must be positive");
    if (height < 2 * kBlob || width < 2 * kBlob)
        throw std::invalid_argument("synth: frame size must be at least " + std::to_string(2 * kBlob) + " pixels");
    if (classes < 2) throw std::invalid_argument("synth: need at least two classes (idle + one action)");
    if (pan_min < 0 || pan_max < pan_min) throw std::invalid_argument("synth: invalid pan range");
    if (noise < 0) throw std::invalid_argument("synth: noise must be nonnegative");
}

std::vector<VideoSample> generate_dataset(const SynthSpec& spec) {
    spec.validate();
    std::vector<VideoSample> videos;
    for (int vid = 0; vid < spec.num_videos; ++vid) {
        std::mt19937_64 rng(spec.seed * 1000003ULL + static_cast<std::uint64_t>(vid));
        VideoSample v;
        char name[32];
        std::snprintf(name, sizeof(name), "video_%03d", vid);
        v.name = name;
        const int T = spec.frames, h = spec.height, w = spec.width;
        v.labels.assign(T, 0);

        // action timeline: idle gaps alternating with action segments
        std::uniform_int_distribution<int> gap_d(4, 8), len_d(8, 14), cls_d(1, spec.classes - 1);
        int t = gap_d(rng);
        while (t + 6 < T) {
            const int len = std::min(len_d(rng), T - t);
            const int cls = cls_d(rng);
            for (int i = 0; i < len; ++i) v.labels[t + i] = cls;
            ActionSegment seg;
            seg.video = v.name;
            seg.cls = cls;
            seg.start = t;
            seg.end = t + len - 1;
            v.segments.push_back(seg);
            t += len + gap_d(rng);
        }

        // blob trajectory: moves along the class direction during actions,
        // wrapping inside the frame; static while idle
        std::uniform_int_distribution<int> px(0, w - kBlob), py(0, h - kBlob);
        double bx = px(rng), by = py(rng);
        std::uniform_real_distribution<double> angle_d(0.0, 2.0 * 3.14159265358979323846);
        std::uniform_real_distribution<double> mag_d(spec.pan_min, spec.pan_max);
        std::normal_distribution<double> noise_d(0.0, spec.noise > 0 ? spec.noise : 1.0);

        v.frames.frames = T;
        v.frames.height = h;
        v.frames.width = w;
        v.frames.channels = 3;
        v.frames.data.assign(static_cast<std::size_t>(T) * h * w * 3, 0.2f);
        v.flows.assign(T, FlowField(w, h));
        v.boxes.resize(T);
        v.pans.assign(T, {0.0, 0.0});

        for (int f = 0; f < T; ++f) {
            const int cls = v.labels[f];
            const int ix = static_cast<int>(bx), iy = static_cast<int>(by);
            // draw blob
            const int pattern = cls > 0 ? class_pattern(cls) : 0;
            const int channel = pattern % 3;
            const bool checker = pattern >= 3;
            for (int y = iy; y < iy + kBlob; ++y)
                for (int x = ix; x < ix + kBlob; ++x) {
                    float val = 1.0f;
                    if (checker && ((x + y) % 2)) val = 0.3f;
                    // idle blob is drawn dimmer in all channels
                    if (cls == 0)
                        for (int c = 0; c < 3; ++c) v.frames.at(f, y, x, c) = 0.6f;
                    else
                        v.frames.at(f, y, x, channel) = val;
                }
            v.boxes[f].push_back(Box{static_cast<double>(ix), static_cast<double>(iy),
                                     static_cast<double>(ix + kBlob - 1), static_cast<double>(iy + kBlob - 1)});

            // flow: class direction inside the blob, camera pan plus noise everywhere
            std::pair<double, double> dir{0.0, 0.0};
            if (cls > 0) dir = class_direction(cls);
            std::pair<double, double> pan{0.0, 0.0};
            if (spec.pan_max > 0) {
                const double mag = mag_d(rng);
                const double ang = angle_d(rng);
                pan = {mag * std::cos(ang), mag * std::sin(ang)};
            }
            v.pans[f] = pan;
            FlowField& fl = v.flows[f];
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    const bool inside = x >= ix && x < ix + kBlob && y >= iy && y < iy + kBlob;
                    double nu = 0.0, nv = 0.0;
                    if (spec.noise > 0) {
                        nu = noise_d(rng);
                        nv = noise_d(rng);
                    }
                    fl.u(x, y) = (inside ? dir.first : 0.0) + pan.first + nu;
                    fl.v(x, y) = (inside ? dir.second : 0.0) + pan.second + nv;
                }

            if (cls > 0) {
                bx += dir.first;
                by += dir.second;
                if (bx > w - kBlob) bx -= (w - kBlob);
                if (by > h - kBlob) by -= (h - kBlob);
                if (bx < 0) bx += (w - kBlob);
                if (by < 0) by += (h - kBlob);
            }
        }
        videos.push_back(std::move(v));
    }
    return videos;
}

void write_frames(const VideoFrames& frames, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(path.string() + ": cannot open for write");
    out.write(kFramesMagic, 4);
    const std::int32_t dims[4] = {frames.frames, frames.height, frames.width, frames.channels};
    out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
    out.write(reinterpret_cast<const char*>(frames.data.data()),
              static_cast<std::streamsize>(frames.data.size() * sizeof(float)));
    if (!out) throw std::runtime_error(path.string() + ": write failed");
}

VideoFrames read_frames(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(path.string() + ": cannot open");
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kFramesMagic, 4) != 0)
        throw std::runtime_error(path.string() + ": bad frames magic");
    std::int32_t dims[4];
    in.read(reinterpret_cast<char*>(dims), sizeof(dims));
    if (!in || dims[0] <= 0 || dims[1] <= 0 || dims[2] <= 0 || dims[3] <= 0)
        throw std::runtime_error(path.string() + ": bad frames header");
    VideoFrames f;
    f.frames = dims[0];
    f.height = dims[1];
    f.width = dims[2];
    f.channels = dims[3];
    f.data.resize(static_cast<std::size_t>(dims[0]) * dims[1] * dims[2] * dims[3]);
    in.read(reinterpret_cast<char*>(f.data.data()), static_cast<std::streamsize>(f.data.size() * sizeof(float)));
    if (static_cast<std::size_t>(in.gcount()) != f.data.size() * sizeof(float))
        throw std::runtime_error(path.string() + ": truncated frames payload");
    return f;
}

void write_dataset(const std::vector<VideoSample>& videos, const SynthSpec& spec, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::ordered_json meta;
    meta["spec"] = {{"num_videos", spec.num_videos}, {"frames", spec.frames},   {"height", spec.height},
                    {"width", spec.width},           {"classes", spec.classes}, {"pan_min", spec.pan_min},
                    {"pan_max", spec.pan_max},       {"noise", spec.noise},     {"seed", spec.seed}};
    meta["videos"] = nlohmann::ordered_json::array();
    std::vector<ActionSegment> gt;
    for (const VideoSample& v : videos) {
        meta["videos"].push_back(v.name);
        const fs::path vdir = dir / v.name;
        fs::create_directories(vdir / "flows");
        write_frames(v.frames, vdir / "frames.dat");
        for (std::size_t f = 0; f < v.flows.size(); ++f) {
            char fname[32];
            std::snprintf(fname, sizeof(fname), "%06zu.flo", f);
            write_flo(v.flows[f], vdir / "flows" / fname);
        }
        write_boxes_json(v.boxes, vdir / "boxes.json");
        std::ofstream lab(vdir / "labels.json", std::ios::trunc);
        lab << nlohmann::json(v.labels).dump() << '\n';
        gt.insert(gt.end(), v.segments.begin(), v.segments.end());
    }
    std::ofstream out(dir / "dataset.json", std::ios::trunc);
    out << meta.dump(2) << '\n';
    write_segments_json(gt, dir / "gt.json", /*with_score=*/false);
}

LoadedDataset read_dataset(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    std::ifstream in(dir / "dataset.json");
    if (!in) throw std::runtime_error((dir / "dataset.json").string() + ": cannot open");
    nlohmann::json meta;
    in >> meta;
    LoadedDataset ds;
    for (const auto& name : meta.at("videos")) {
        LoadedVideo v;
        v.name = name.get<std::string>();
        const fs::path vdir = dir / v.name;
        v.frames = read_frames(vdir / "frames.dat");
        std::vector<fs::path> flo_files;
        for (const auto& e : fs::directory_iterator(vdir / "flows"))
            if (e.path().extension() == ".flo") flo_files.push_back(e.path());
        std::sort(flo_files.begin(), flo_files.end());
        for (const auto& p : flo_files) v.flows.push_back(read_flo(p));
        v.boxes = read_boxes_json(vdir / "boxes.json");
        std::ifstream lab(vdir / "labels.json");
        if (!lab) throw std::runtime_error((vdir / "labels.json").string() + ": cannot open");
        nlohmann::json lj;
        lab >> lj;
        v.labels = lj.get<std::vector<int>>();
        ds.videos.push_back(std::move(v));
    }
    if (fs::exists(dir / "gt.json")) ds.ground_truth = read_segments_json(dir / "gt.json", /*require_score=*/false);
    return ds;
}

SynthSpec read_synth_spec(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error(path.string() + ": cannot open");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(path.string() + ": invalid JSON: " + e.what());
    }
    static const std::vector<std::string> known = {"num_videos", "frames", "height", "width", "classes",
                                                   "pan_min",    "pan_max", "noise",  "seed"};
    for (const auto& [key, val] : j.items())
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw std::runtime_error(path.string() + ": unknown key '" + key + "'");
    SynthSpec s;
    if (j.contains("num_videos")) s.num_videos = j["num_videos"];
    if (j.contains("frames")) s.frames = j["frames"];
    if (j.contains("height")) s.height = j["height"];
    if (j.contains("width")) s.width = j["width"];
    if (j.contains("classes")) s.classes = j["classes"];
    if (j.contains("pan_min")) s.pan_min = j["pan_min"];
    if (j.contains("pan_max")) s.pan_max = j["pan_max"];
    if (j.contains("noise")) s.noise = j["noise"];
    if (j.contains("seed")) s.seed = j["seed"];
    s.validate();
    return s;
}

}  // namespace mmdet
