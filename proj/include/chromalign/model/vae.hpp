#pragma once

// Exactly invertible 8x8 patch codec standing in for the SD autoencoder.
// Channels 0-2 carry the patch mean colour in a scaled YCbCr basis; channel 3
// carries the amplitude of a zero-mean horizontal luminance ramp inside the
// patch. decode() then encode() is the identity on latents.

#include <Eigen/Dense>

#include <array>

#include "chromalign/core/error.hpp"
#include "chromalign/core/image.hpp"
#include "chromalign/core/tensor.hpp"

namespace chromalign {

class PatchCodec {
public:
    static constexpr int kFactor = 8;
    static constexpr int kChannels = 4;

    PatchCodec() {
        basis_ << 0.299f * 3.0f, 0.587f * 3.0f, 0.114f * 3.0f,  //
            -0.168736f * 4.0f, -0.331264f * 4.0f, 0.5f * 4.0f,      //
            0.5f * 4.0f, -0.418688f * 4.0f, -0.081312f * 4.0f;
        inverse_ = basis_.cast<double>().inverse();
        double norm = 0.0;
        for (int x = 0; x < kFactor; ++x) {
            ramp_[x] = (x - (kFactor - 1) / 2.0) / ((kFactor - 1) / 2.0);
            norm += ramp_[x] * ramp_[x] * kFactor;
        }
        ramp_norm_ = norm;
    }

    Latent encode(const Image& im) const {
        require(im.width % kFactor == 0 && im.height % kFactor == 0, "image sides must be multiples of 8");
        Latent z(kChannels, im.height / kFactor, im.width / kFactor);
        for (int by = 0; by < z.height; ++by)
            for (int bx = 0; bx < z.width; ++bx) {
                Eigen::Vector3d mean = Eigen::Vector3d::Zero();
                double ramp = 0.0;
                for (int y = 0; y < kFactor; ++y)
                    for (int x = 0; x < kFactor; ++x) {
                        const int px = bx * kFactor + x, py = by * kFactor + y;
                        const double r = im.at(px, py, 0), g = im.at(px, py, 1), b = im.at(px, py, 2);
                        mean += Eigen::Vector3d(r, g, b);
                        ramp += (0.299 * r + 0.587 * g + 0.114 * b) * ramp_[x];
                    }
                mean /= kFactor * kFactor;
                const Eigen::Vector3d l = basis_.cast<double>() * (mean - Eigen::Vector3d::Constant(0.5));
                for (int c = 0; c < 3; ++c) z.at(c, by, bx) = static_cast<float>(l(c));
                z.at(3, by, bx) = static_cast<float>(kRampGain * ramp / ramp_norm_);
            }
        return z;
    }

    Image decode(const Latent& z) const {
        require(z.channels == kChannels, "patch codec expects 4 latent channels");
        Image im(z.width * kFactor, z.height * kFactor);
        for (int by = 0; by < z.height; ++by)
            for (int bx = 0; bx < z.width; ++bx) {
                const Eigen::Vector3d l(z.at(0, by, bx), z.at(1, by, bx), z.at(2, by, bx));
                const Eigen::Vector3d mean = inverse_ * l + Eigen::Vector3d::Constant(0.5);
                const double amp = z.at(3, by, bx) / kRampGain;
                for (int y = 0; y < kFactor; ++y)
                    for (int x = 0; x < kFactor; ++x)
                        for (int c = 0; c < 3; ++c)
                            im.at(bx * kFactor + x, by * kFactor + y, c) = static_cast<float>(mean(c) + amp * ramp_[x]);
            }
        return im;
    }

private:
    static constexpr double kRampGain = 4.0;
    Eigen::Matrix3f basis_;
    Eigen::Matrix3d inverse_;
    std::array<double, kFactor> ramp_{};
    double ramp_norm_ = 1.0;
};

}  // namespace chromalign
