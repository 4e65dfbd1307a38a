#pragma once

// Metric backbones served over HTTP. Each service answers GET {url}/info with
// {"name", "version"}; the pair is recorded in every report.
//
//   structure:  POST /embed       {"image"}          -> {"embedding": [...]}
//   perceptual: POST /distance    {"a", "b"}         -> {"distance": d}
//   text-image: POST /similarity  {"image", "text"}  -> {"similarity": s}

#include <cstdlib>
#include <memory>
#include <string>

#include "chromalign/core/hash.hpp"
#include "chromalign/core/image.hpp"
#include "chromalign/metrics/quality.hpp"
#include "chromalign/net/http_client.hpp"

namespace chromalign {

namespace detail {

inline std::string png_b64(const Image& im) { return base64_encode(encode_png(quantized(im))); }

class HttpProviderBase {
protected:
    explicit HttpProviderBase(const std::string& url) : client_(url) {
        const auto info = client_.get("/info");
        try {
            name_ = info.at("name").get<std::string>();
            version_ = info.at("version").get<std::string>();
        } catch (const nlohmann::json::exception&) {
            throw ProviderUnavailable(client_.endpoint().url() + "/info: missing name or version");
        }
    }

    template <class T>
    T field(const nlohmann::json& reply, const char* key) const {
        try {
            return reply.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ProviderUnavailable(client_.endpoint().url() + ": reply lacks '" + key + "'");
        }
    }

    net::JsonClient client_;
    std::string name_, version_;
};

}  // namespace detail

class HttpEmbeddingProvider final : public EmbeddingProvider, detail::HttpProviderBase {
public:
    explicit HttpEmbeddingProvider(const std::string& url) : HttpProviderBase(url) {}
    std::string name() const override { return name_; }
    std::string version() const override { return version_; }
    std::vector<float> embed(const Image& im) override {
        return field<std::vector<float>>(client_.post("/embed", {{"image", detail::png_b64(im)}}), "embedding");
    }
};

class HttpPerceptualProvider final : public PerceptualProvider, detail::HttpProviderBase {
public:
    explicit HttpPerceptualProvider(const std::string& url) : HttpProviderBase(url) {}
    std::string name() const override { return name_; }
    std::string version() const override { return version_; }
    double distance(const Image& a, const Image& b) override {
        return field<double>(client_.post("/distance", {{"a", detail::png_b64(a)}, {"b", detail::png_b64(b)}}), "distance");
    }
};

class HttpTextImageProvider final : public TextImageProvider, detail::HttpProviderBase {
public:
    explicit HttpTextImageProvider(const std::string& url) : HttpProviderBase(url) {}
    std::string name() const override { return name_; }
    std::string version() const override { return version_; }
    double similarity(const Image& im, const std::string& text) override {
        return field<double>(client_.post("/similarity", {{"image", detail::png_b64(im)}, {"text", text}}), "similarity");
    }
};

// Surrogates unless CHROMALIGN_DS_URL / CHROMALIGN_LPIPS_URL point elsewhere.
// CS has no surrogate and needs CHROMALIGN_CS_URL.
inline MetricProviders providers_from_env() {
    auto p = MetricProviders::surrogates();
    auto env = [](const char* k) -> std::string {
        const char* v = std::getenv(k);
        return v ? v : "";
    };
    if (auto u = env("CHROMALIGN_DS_URL"); !u.empty()) p.structure = std::make_shared<HttpEmbeddingProvider>(u);
    if (auto u = env("CHROMALIGN_LPIPS_URL"); !u.empty()) p.perceptual = std::make_shared<HttpPerceptualProvider>(u);
    if (auto u = env("CHROMALIGN_CS_URL"); !u.empty()) p.text_image = std::make_shared<HttpTextImageProvider>(u);
    return p;
}

}  // namespace chromalign
