#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mmdet/detection.hpp"
#include "mmdet/flow.hpp"
#include "mmdet/transformer.hpp"

namespace mmdet {

struct SynthSpec {
    int num_videos = 10;
    int frames = 64;
    int height = 32;
    int width = 32;
    int classes = 4;  // class 0 is idle/background
    double pan_min = 0.0;
    double pan_max = 0.0;
    double noise = 0.0;
    std::uint64_t seed = 1;

    void validate() const;
};

struct VideoSample {
    std::string name;
    VideoFrames frames;
    std::vector<FlowField> flows;
    PersonBoxes boxes;
    std::vector<int> labels;  // per-frame class id
    std::vector<ActionSegment> segments;
    std::vector<std::pair<double, double>> pans;  // per-frame camera pan added to the flows
};

// Moving-blob videos: the class is determined jointly by the blob's spatial
// pattern and its motion direction, so neither modality alone separates the
// classes. Deterministic given the spec.
std::vector<VideoSample> generate_dataset(const SynthSpec& spec);

void write_dataset(const std::vector<VideoSample>& videos, const SynthSpec& spec, const std::filesystem::path& dir);

struct LoadedVideo {
    std::string name;
    VideoFrames frames;
    std::vector<FlowField> flows;
    PersonBoxes boxes;
    std::vector<int> labels;
};

struct LoadedDataset {
    std::vector<LoadedVideo> videos;
    std::vector<ActionSegment> ground_truth;
};

LoadedDataset read_dataset(const std::filesystem::path& dir);

void write_frames(const VideoFrames& frames, const std::filesystem::path& path);
VideoFrames read_frames(const std::filesystem::path& path);

SynthSpec read_synth_spec(const std::filesystem::path& path);

}  // namespace mmdet
