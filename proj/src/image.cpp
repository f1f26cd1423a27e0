#include "iuf/image.hpp"

#include <algorithm>
#include <cmath>

namespace iuf {

Image resize_bilinear(const Image& src, int out_h, int out_w) {
    Image out(src.channels, out_h, out_w);
    if (src.height == out_h && src.width == out_w) {
        out.data = src.data;
        return out;
    }
    const double sy = static_cast<double>(src.height) / out_h;
    const double sx = static_cast<double>(src.width) / out_w;
    for (int c = 0; c < src.channels; ++c) {
        for (int y = 0; y < out_h; ++y) {
            double fy = (y + 0.5) * sy - 0.5;
            int y0 = static_cast<int>(std::floor(fy));
            double wy = fy - y0;
            int y1 = std::clamp(y0 + 1, 0, src.height - 1);
            y0 = std::clamp(y0, 0, src.height - 1);
            for (int x = 0; x < out_w; ++x) {
                double fx = (x + 0.5) * sx - 0.5;
                int x0 = static_cast<int>(std::floor(fx));
                double wx = fx - x0;
                int x1 = std::clamp(x0 + 1, 0, src.width - 1);
                x0 = std::clamp(x0, 0, src.width - 1);
                double top = src.at(c, y0, x0) * (1 - wx) + src.at(c, y0, x1) * wx;
                double bot = src.at(c, y1, x0) * (1 - wx) + src.at(c, y1, x1) * wx;
                out.at(c, y, x) = top * (1 - wy) + bot * wy;
            }
        }
    }
    return out;
}

Mask resize_nearest(const Mask& src, int out_h, int out_w) {
    Mask out(out_h, out_w);
    if (src.height == out_h && src.width == out_w) {
        out.data = src.data;
        return out;
    }
    for (int y = 0; y < out_h; ++y) {
        int sy = std::min(static_cast<int>((y + 0.5) * src.height / out_h), src.height - 1);
        for (int x = 0; x < out_w; ++x) {
            int sx = std::min(static_cast<int>((x + 0.5) * src.width / out_w), src.width - 1);
            out.at(y, x) = src.at(sy, sx);
        }
    }
    return out;
}

}  // namespace iuf
