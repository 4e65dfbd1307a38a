#pragma once

// Synthetic ColorBench tree: 6 subjects with 5 images and 94 with 4 (406
// sources), each with a mask and seven 4x4 targets.

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "chromalign/bench/datasets.hpp"
#include "chromalign/core/array_file.hpp"
#include "chromalign/core/image.hpp"
#include "chromalign/core/io.hpp"

namespace testing_support {

inline void write_colorbench_fixture(const std::filesystem::path& root, int side = 4) {
    using namespace chromalign;
    const auto& subjects = colorbench_subjects();
    const auto src_png = encode_png(Image::filled(side, side, 0.4f, 0.5f, 0.6f));
    Mask m(side, side);
    m.at(side / 2, side / 2) = 1;
    const auto mask_png = encode_mask_png(m);
    std::vector<std::vector<unsigned char>> target_png;
    for (const auto& c : kPureColors) target_png.push_back(encode_png(pure_color_image(c, side, side)));

    std::filesystem::create_directories(root / "source");
    std::filesystem::create_directories(root / "masks");
    for (const auto& c : kPureColors) std::filesystem::create_directories(root / "targets" / std::string(c.name));
    nlohmann::json images = nlohmann::json::array();
    for (std::size_t s = 0; s < subjects.size(); ++s) {
        const int n = s < 6 ? 5 : 4;
        for (int k = 1; k <= n; ++k) {
            const std::string id = subjects[s] + "_" + std::to_string(k);
            write_bytes(root / "source" / (id + ".png"), src_png);
            write_bytes(root / "masks" / (id + ".png"), mask_png);
            for (std::size_t c = 0; c < kPureColors.size(); ++c)
                write_bytes(root / "targets" / std::string(kPureColors[c].name) / (id + ".png"), target_png[c]);
            images.push_back({{"id", id}, {"subject", subjects[s]}});
        }
    }
    detail::write_text(root / "index.json", nlohmann::json{{"images", images}}.dump(1));
}

}  // namespace testing_support
