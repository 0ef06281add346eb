#include "msfpt/parallel.hpp"

#include <charconv>
#include <cstdlib>
#include <string>
#include <string_view>

namespace msfpt {

std::size_t threads_from_env() {
    const char* raw = std::getenv("MSFPT_THREADS");
    std::size_t n = 0;
    if (raw != nullptr && *raw != '\0') {
        const std::string_view s(raw);
        const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), n);
        if (ec != std::errc() || end != s.data() + s.size()) {
            throw ConfigError("MSFPT_THREADS must be a non-negative integer, got '" + std::string(s) + "'");
        }
    }
    if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
    return n;
}

}  // namespace msfpt
