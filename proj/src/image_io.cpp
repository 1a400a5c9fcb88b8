#include "fairvit/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "fairvit/errors.hpp"

namespace fairvit {

namespace {

uint8_t to_byte(double v) {
    const double c = std::clamp(v, 0.0, 1.0);
    return static_cast<uint8_t>(std::lround(c * 255.0));
}

// Reads one whitespace-delimited token, skipping '#' comment lines.
std::string next_token(std::istream& in) {
    std::string tok;
    while (in) {
        const int c = in.peek();
        if (c == EOF) break;
        if (std::isspace(c)) {
            in.get();
            continue;
        }
        if (c == '#') {
            std::string line;
            std::getline(in, line);
            continue;
        }
        in >> tok;
        return tok;
    }
    throw IoError("netpbm: unexpected end of header");
}

void read_header(std::istream& in, const std::string& expected_magic, size_t& w, size_t& h) {
    const std::string magic = next_token(in);
    if (magic != expected_magic) {
        throw IoError("netpbm: expected magic " + expected_magic + ", got '" + magic + "'");
    }
    w = std::stoul(next_token(in));
    h = std::stoul(next_token(in));
    const size_t maxval = std::stoul(next_token(in));
    if (w == 0 || h == 0 || maxval != 255) {
        throw IoError("netpbm: unsupported header (maxval must be 255)");
    }
    in.get();  // the single whitespace before binary data
}

}  // namespace

void write_ppm(const std::string& path, const Tensor& image) {
    if (image.rank() != 3 || image.dim(0) != 3) {
        throw ShapeError("write_ppm: expected [3,h,w], got " + shape_str(image.shape()));
    }
    const size_t h = image.dim(1), w = image.dim(2);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "P6\n" << w << " " << h << "\n255\n";
    std::vector<uint8_t> row(w * 3);
    for (size_t y = 0; y < h; ++y) {
        for (size_t x = 0; x < w; ++x) {
            for (size_t c = 0; c < 3; ++c) row[x * 3 + c] = to_byte(image[(c * h + y) * w + x]);
        }
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!out) throw IoError("failed writing " + path);
}

void write_pgm(const std::string& path, const Tensor& map) {
    if (map.rank() != 2) throw ShapeError("write_pgm: expected [h,w], got " + shape_str(map.shape()));
    const size_t h = map.dim(0), w = map.dim(1);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "P5\n" << w << " " << h << "\n255\n";
    std::vector<uint8_t> row(w);
    for (size_t y = 0; y < h; ++y) {
        for (size_t x = 0; x < w; ++x) row[x] = to_byte(map[y * w + x]);
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!out) throw IoError("failed writing " + path);
}

Tensor read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    size_t w = 0, h = 0;
    read_header(in, "P6", w, h);
    std::vector<uint8_t> raw(w * h * 3);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<size_t>(in.gcount()) != raw.size()) throw IoError("truncated PPM data in " + path);
    Tensor img({3, h, w});
    for (size_t y = 0; y < h; ++y) {
        for (size_t x = 0; x < w; ++x) {
            for (size_t c = 0; c < 3; ++c) {
                img[(c * h + y) * w + x] = raw[(y * w + x) * 3 + c] / 255.0;
            }
        }
    }
    return img;
}

Tensor read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    size_t w = 0, h = 0;
    read_header(in, "P5", w, h);
    std::vector<uint8_t> raw(w * h);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<size_t>(in.gcount()) != raw.size()) throw IoError("truncated PGM data in " + path);
    Tensor img({h, w});
    for (size_t i = 0; i < w * h; ++i) img[i] = raw[i] / 255.0;
    return img;
}

Tensor read_image(const std::string& path) {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw IoError("cannot open " + path);
    char magic[2] = {0, 0};
    probe.read(magic, 2);
    probe.close();
    if (magic[0] == 'P' && magic[1] == '6') return read_ppm(path);
    if (magic[0] == 'P' && magic[1] == '5') {
        Tensor g = read_pgm(path);
        return Tensor({1, g.dim(0), g.dim(1)}, g.data());
    }
    throw IoError("unsupported image format in " + path + " (expected binary PPM/PGM)");
}

Tensor resize_bilinear(const Tensor& image, size_t out_h, size_t out_w) {
    if (image.rank() != 3) {
        throw ShapeError("resize_bilinear: expected [c,h,w], got " + shape_str(image.shape()));
    }
    const size_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
    if (out_h == 0 || out_w == 0) throw ShapeError("resize_bilinear: output size must be positive");
    if (out_h == H && out_w == W) return image;

    Tensor out({C, out_h, out_w});
    const double sy = out_h > 1 ? static_cast<double>(H - 1) / static_cast<double>(out_h - 1) : 0.0;
    const double sx = out_w > 1 ? static_cast<double>(W - 1) / static_cast<double>(out_w - 1) : 0.0;
    for (size_t c = 0; c < C; ++c) {
        const double* plane = image.data().data() + c * H * W;
        double* oplane = out.data().data() + c * out_h * out_w;
        for (size_t y = 0; y < out_h; ++y) {
            const double fy = y * sy;
            const size_t y0 = static_cast<size_t>(fy);
            const size_t y1 = std::min(y0 + 1, H - 1);
            const double wy = fy - static_cast<double>(y0);
            for (size_t x = 0; x < out_w; ++x) {
                const double fx = x * sx;
                const size_t x0 = static_cast<size_t>(fx);
                const size_t x1 = std::min(x0 + 1, W - 1);
                const double wx = fx - static_cast<double>(x0);
                const double top = plane[y0 * W + x0] * (1 - wx) + plane[y0 * W + x1] * wx;
                const double bot = plane[y1 * W + x0] * (1 - wx) + plane[y1 * W + x1] * wx;
                oplane[y * out_w + x] = top * (1 - wy) + bot * wy;
            }
        }
    }
    return out;
}

}  // namespace fairvit
