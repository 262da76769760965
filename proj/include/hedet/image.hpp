#pragma once

#include <string>
#include <vector>

namespace hedet {

/// Dense RGB image, row-major interleaved, values in [0,1].
struct Image {
    int width = 0;
    int height = 0;
    std::vector<double> pixels;

    static Image filled(int w, int h, double r, double g, double b);

    double& at(int x, int y, int c) {
        return pixels[static_cast<std::size_t>((y * width + x) * 3 + c)];
    }
    double at(int x, int y, int c) const {
        return pixels[static_cast<std::size_t>((y * width + x) * 3 + c)];
    }
};

/// Binary PPM (P6, maxval 255) round trip.
void write_ppm(const std::string& path, const Image& img);
Image read_ppm(const std::string& path);

} // namespace hedet
