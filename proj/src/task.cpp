#include "m3/harness/task.hpp"

#include <algorithm>
#include <array>
#include <random>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "m3/toy_lmm.hpp"  // SeededNormal

namespace m3 {

namespace vocab {

std::string token_name(int id) {
    static const char* colors[] = {"black", "red",     "green", "yellow",
                                   "blue",  "magenta", "cyan",  "white"};
    if (id == kEos) return "<eos>";
    if (id == kAskColor) return "q_color";
    if (id == kAskGlyph) return "q_glyph";
    if (id >= kColorBase && id < kColorBase + kNumColors) return colors[id - kColorBase];
    if (id >= kGlyphBase && id < kGlyphBase + kNumGlyphs) {
        return "glyph_" + std::to_string(id - kGlyphBase);
    }
    if (id >= kRowBase && id < kRowBase + kGridSide) return "row_" + std::to_string(id - kRowBase);
    if (id >= kColBase && id < kColBase + kGridSide) return "col_" + std::to_string(id - kColBase);
    if (id >= 0 && id < kSize) return "<unused_" + std::to_string(id) + ">";
    throw std::invalid_argument("token_name: id out of range");
}

}  // namespace vocab

std::array<float, 3> palette_color(int color_id) {
    if (color_id < 0 || color_id >= kNumColors) {
        throw std::invalid_argument("palette_color: id out of range");
    }
    return {static_cast<float>(color_id & 1), static_cast<float>((color_id >> 1) & 1),
            static_cast<float>((color_id >> 2) & 1)};
}

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    // splitmix64 step
    std::uint64_t z = seed + salt * 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

SyntheticImage make_image(std::uint64_t image_seed, int dominant, int glyph) {
    SyntheticImage img;
    img.image_seed = image_seed;
    img.dominant_color = dominant;
    img.glyph_id = glyph;
    const int n = kGridSide * kGridSide;
    img.cell_colors.assign(static_cast<std::size_t>(n), dominant);

    std::mt19937 rng(static_cast<std::uint32_t>(mix_seed(image_seed, 11)));
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    for (int i = n - 1; i > 0; --i) {
        std::swap(order[static_cast<std::size_t>(i)],
                  order[rng() % static_cast<std::uint32_t>(i + 1)]);
    }
    // dominant color keeps ceil(0.6 * n) cells; the rest draw from the other 7
    const int keep = (6 * n + 9) / 10;
    for (int i = keep; i < n; ++i) {
        int c = static_cast<int>(rng() % (kNumColors - 1));
        if (c >= dominant) ++c;
        img.cell_colors[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = c;
    }
    int cell = static_cast<int>(rng() % static_cast<std::uint32_t>(n));
    img.marked_row = cell / kGridSide;
    img.marked_col = cell % kGridSide;
    return img;
}

TaskInstance make_instance(const std::string& split, TaskInstance::Kind kind, int index,
                           std::uint64_t image_seed, int dominant, int glyph) {
    TaskInstance inst;
    inst.split = split;
    inst.kind = kind;
    inst.image = make_image(image_seed, dominant, glyph);
    inst.id = split + "_" +
              (kind == TaskInstance::Kind::GlobalColor ? std::string("color_") : std::string("glyph_")) +
              std::to_string(index);
    if (kind == TaskInstance::Kind::GlobalColor) {
        inst.question = {vocab::kAskColor};
        inst.answer = {vocab::kColorBase + dominant, vocab::kEos};
    } else {
        inst.question = {vocab::kAskGlyph, vocab::kRowBase + inst.image.marked_row,
                         vocab::kColBase + inst.image.marked_col};
        inst.answer = {vocab::kGlyphBase + glyph, vocab::kEos};
    }
    return inst;
}

void fill_split(std::vector<TaskInstance>& out, const std::string& split, std::uint64_t seed,
                std::uint64_t split_salt, int n_color, int n_glyph) {
    for (int i = 0; i < n_color; ++i) {
        std::uint64_t s = mix_seed(seed, split_salt * 1000003 + 2 * i);
        out.push_back(make_instance(split, TaskInstance::Kind::GlobalColor, i, s, i % kNumColors,
                                    static_cast<int>(mix_seed(s, 7) % kNumGlyphs)));
    }
    for (int i = 0; i < n_glyph; ++i) {
        std::uint64_t s = mix_seed(seed, split_salt * 1000003 + 2 * i + 1);
        out.push_back(make_instance(split, TaskInstance::Kind::LocalGlyph, i, s,
                                    static_cast<int>(mix_seed(s, 13) % kNumColors),
                                    i % kNumGlyphs));
    }
}

}  // namespace

Dataset generate_dataset(std::uint64_t seed, const DatasetCounts& counts) {
    if (counts.train_color < 1 || counts.train_glyph < 1 || counts.test_color < 1 ||
        counts.test_glyph < 1) {
        throw std::invalid_argument("generate_dataset: counts must be >= 1");
    }
    Dataset ds;
    fill_split(ds.train, "train", seed, 1, counts.train_color, counts.train_glyph);
    fill_split(ds.test, "test", seed, 2, counts.test_color, counts.test_glyph);
    return ds;
}

TokenGrid<float> rasterize(const SyntheticImage& image, int patch) {
    const int g = image.grid_side;
    if (static_cast<int>(image.cell_colors.size()) != g * g) {
        throw std::invalid_argument("rasterize: cell count mismatch");
    }
    const int side = g * patch;
    const int channels = 3 + kNumGlyphs;
    TokenGrid<float> px(side, side, channels);
    SeededNormal jitter(mix_seed(image.image_seed, 31));
    std::array<float, kNumGlyphs> offset;
    for (int gl = 0; gl < kNumGlyphs; ++gl) {
        offset[static_cast<std::size_t>(gl)] =
            kGlyphOffset * static_cast<float>(jitter.normal());
    }
    for (int i = 0; i < side; ++i) {
        for (int j = 0; j < side; ++j) {
            const int ci = i / patch, cj = j / patch;
            auto rgb = palette_color(image.cell_colors[static_cast<std::size_t>(ci * g + cj)]);
            for (int ch = 0; ch < 3; ++ch) {
                px.at(i, j, ch) =
                    rgb[static_cast<std::size_t>(ch)] +
                    kColorJitter * static_cast<float>(jitter.normal());
            }
            for (int gl = 0; gl < kNumGlyphs; ++gl) {
                float v = offset[static_cast<std::size_t>(gl)] +
                          kGlyphJitter * static_cast<float>(jitter.normal());
                if (ci == image.marked_row && cj == image.marked_col && gl == image.glyph_id) {
                    v += kGlyphAmp;
                }
                px.at(i, j, 3 + gl) = v;
            }
        }
    }
    return px;
}

std::string dataset_to_jsonl(const Dataset& ds) {
    std::ostringstream os;
    auto emit = [&](const TaskInstance& t) {
        nlohmann::json j;
        j["id"] = t.id;
        j["split"] = t.split;
        j["kind"] = t.kind == TaskInstance::Kind::GlobalColor ? "global-color" : "local-glyph";
        j["image_seed"] = t.image.image_seed;
        j["grid_side"] = t.image.grid_side;
        j["cells"] = t.image.cell_colors;
        j["marked"] = {t.image.marked_row, t.image.marked_col};
        j["glyph"] = t.image.glyph_id;
        j["dominant"] = t.image.dominant_color;
        j["question"] = t.question;
        j["answer"] = t.answer;
        os << j.dump() << "\n";
    };
    for (const auto& t : ds.train) emit(t);
    for (const auto& t : ds.test) emit(t);
    return os.str();
}

Dataset dataset_from_jsonl(const std::string& text) {
    Dataset ds;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        TaskInstance t;
        t.id = j.at("id");
        t.split = j.at("split");
        t.kind = j.at("kind") == "global-color" ? TaskInstance::Kind::GlobalColor
                                                : TaskInstance::Kind::LocalGlyph;
        t.image.image_seed = j.at("image_seed");
        t.image.grid_side = j.at("grid_side");
        t.image.cell_colors = j.at("cells").get<std::vector<int>>();
        t.image.marked_row = j.at("marked")[0];
        t.image.marked_col = j.at("marked")[1];
        t.image.glyph_id = j.at("glyph");
        t.image.dominant_color = j.at("dominant");
        t.question = j.at("question").get<std::vector<int>>();
        t.answer = j.at("answer").get<std::vector<int>>();
        (t.split == "train" ? ds.train : ds.test).push_back(std::move(t));
    }
    return ds;
}

}  // namespace m3
