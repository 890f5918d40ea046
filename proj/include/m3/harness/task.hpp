// Synthetic visual QA task: cell-grid images with a dominant color (global
// question, answerable from one pooled token) and a single glyph-marked cell
// (local question, requires fine scales). Closed vocabulary shared by
// questions and answers.
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "m3/token_pyramid.hpp"

namespace m3 {

// Fixed token ids. 43..63 are reserved/unused padding of the 64-entry vocab.
namespace vocab {
constexpr int kSize = 64;
constexpr int kEos = 0;
constexpr int kAskColor = 1;
constexpr int kAskGlyph = 2;
constexpr int kColorBase = 3;   // 8 color names
constexpr int kGlyphBase = 11;  // 8 glyph names
constexpr int kRowBase = 19;    // row_0 .. row_11
constexpr int kColBase = 31;    // col_0 .. col_11

std::string token_name(int id);
}  // namespace vocab

constexpr int kNumColors = 8;
constexpr int kNumGlyphs = 8;
constexpr int kGridSide = 12;

// RGB palette: the 8 corners of the unit color cube.
std::array<float, 3> palette_color(int color_id);

struct SyntheticImage {
    int grid_side = kGridSide;
    std::vector<int> cell_colors;  // grid_side^2 entries
    int marked_row = 0;
    int marked_col = 0;
    int glyph_id = 0;
    int dominant_color = 0;
    std::uint64_t image_seed = 0;
};

struct TaskInstance {
    enum class Kind { GlobalColor, LocalGlyph };
    std::string id;
    std::string split;  // "train" or "test"
    Kind kind = Kind::GlobalColor;
    SyntheticImage image;
    std::vector<int> question;
    std::vector<int> answer;  // answer token followed by <eos>
};

struct Dataset {
    std::vector<TaskInstance> train;
    std::vector<TaskInstance> test;
};

struct DatasetCounts {
    int train_color = 8192;
    int train_glyph = 8192;
    int test_color = 256;
    int test_glyph = 256;
};

// Deterministic given seed; train/test image seeds are disjoint by
// construction; dominant colors and glyphs cycle for exact label balance.
Dataset generate_dataset(std::uint64_t seed, const DatasetCounts& counts);

// Pixel tensor for the encoder: (grid*patch) x (grid*patch) x 11 channels
// (3 color + 8 glyph one-hot), with seeded per-subpixel jitter derived from
// the image seed. The glyph contributes to a single cell only.
TokenGrid<float> rasterize(const SyntheticImage& image, int patch);

// Glyph amplitude and jitter magnitudes. Each glyph channel carries a
// per-image global offset (sd kGlyphOffset) on top of per-subpixel jitter
// (sd kGlyphJitter). The offset is constant across cells, so it cancels in
// within-channel contrasts and fine scales stay clean, but it does not
// average away under pooling, which buries the 1-token cue
// (signal amp/144 = 0.056 vs offset sd 0.4).
constexpr float kColorJitter = 0.2f;
constexpr float kGlyphAmp = 8.0f;
constexpr float kGlyphJitter = 0.2f;
constexpr float kGlyphOffset = 0.4f;

// JSONL round trip for dataset files (one instance per line).
std::string dataset_to_jsonl(const Dataset& ds);
Dataset dataset_from_jsonl(const std::string& text);

}  // namespace m3
