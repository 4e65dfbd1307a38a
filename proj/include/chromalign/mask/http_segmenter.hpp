#pragma once

// Point-prompted segmenter reached over HTTP.
//
//   POST {url}/segment  {"image": <base64 PNG>, "point": [x, y]}
//   -> {"masks": [{"mask": <base64 1-bit PNG>, "score": s}, ...]}

#include <string>
#include <vector>

#include "chromalign/core/hash.hpp"
#include "chromalign/core/image.hpp"
#include "chromalign/mask/masking.hpp"
#include "chromalign/net/http_client.hpp"

namespace chromalign {

class HttpSegmenter final : public Segmenter {
public:
    explicit HttpSegmenter(const std::string& url) : client_(url) {}

    std::string name() const override { return "http-segmenter(" + client_.endpoint().url() + ")"; }

    std::vector<ScoredMask> segment(const Image& image, Point point) override {
        const auto png = encode_png(image);
        const auto reply = client_.post("/segment", {{"image", base64_encode(png)}, {"point", {point.x, point.y}}});
        std::vector<ScoredMask> out;
        try {
            for (const auto& m : reply.at("masks")) {
                const auto bytes = base64_decode(m.at("mask").get<std::string>());
                ScoredMask s;
                s.mask = decode_mask_png(bytes);
                s.score = m.value("score", 0.0);
                if (s.mask.width != image.width || s.mask.height != image.height)
                    s.mask = resize_nearest(s.mask, image.width, image.height);
                out.push_back(std::move(s));
            }
        } catch (const std::exception& e) {
            throw ProviderUnavailable(name() + ": malformed mask list: " + e.what());
        }
        return out;
    }

private:
    net::JsonClient client_;
};

}  // namespace chromalign
