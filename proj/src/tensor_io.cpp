#include "m3/tensor_io.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace m3 {

namespace {

static_assert(sizeof(float) == 4, "float must be 32-bit");

bool host_is_little_endian() {
    const std::uint32_t one = 1;
    std::uint8_t b;
    std::memcpy(&b, &one, 1);
    return b == 1;
}

void byte_swap_floats(std::vector<float>& v) {
    for (float& f : v) {
        std::uint32_t u;
        std::memcpy(&u, &f, 4);
        u = ((u & 0xFF000000u) >> 24) | ((u & 0x00FF0000u) >> 8) | ((u & 0x0000FF00u) << 8) |
            ((u & 0x000000FFu) << 24);
        std::memcpy(&f, &u, 4);
    }
}

}  // namespace

void write_grid(const std::string& path, const TokenGrid<float>& g) {
    g.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_grid: cannot open " + path);
    nlohmann::json header = {{"h", g.h}, {"w", g.w}, {"c", g.c}};
    out << header.dump() << "\n";
    std::vector<float> data = g.v;
    if (!host_is_little_endian()) byte_swap_floats(data);
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(float)));
    if (!out) throw std::runtime_error("write_grid: write failed for " + path);
}

TokenGrid<float> read_grid(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_grid: cannot open " + path);
    std::string header_line;
    if (!std::getline(in, header_line)) throw std::runtime_error("read_grid: missing header");
    nlohmann::json header = nlohmann::json::parse(header_line);
    TokenGrid<float> g(header.at("h").get<int>(), header.at("w").get<int>(),
                       header.at("c").get<int>());
    in.read(reinterpret_cast<char*>(g.v.data()),
            static_cast<std::streamsize>(g.v.size() * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(g.v.size() * sizeof(float))) {
        throw std::runtime_error("read_grid: truncated payload in " + path);
    }
    if (!host_is_little_endian()) byte_swap_floats(g.v);
    g.validate();
    return g;
}

}  // namespace m3
