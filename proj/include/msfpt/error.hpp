#pragma once

#include <stdexcept>
#include <string>

namespace msfpt {

// Every library error carries a short machine-readable code ("dimension",
// "checksum", ...) next to the human message. The CLI prints both.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(message), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

#define MSFPT_DEFINE_ERROR(Name, Base, Code)                                  \
    class Name : public Base {                                                \
    public:                                                                   \
        explicit Name(const std::string& message) : Base(Code, message) {}    \
                                                                              \
    protected:                                                                \
        Name(std::string code, const std::string& message)                    \
            : Base(std::move(code), message) {}                               \
    }

MSFPT_DEFINE_ERROR(DimensionError, Error, "dimension");
MSFPT_DEFINE_ERROR(ContractError, Error, "contract");
MSFPT_DEFINE_ERROR(NumericError, Error, "numeric");
MSFPT_DEFINE_ERROR(ConfigError, Error, "config");
MSFPT_DEFINE_ERROR(InputTooSmallError, Error, "input_too_small");
MSFPT_DEFINE_ERROR(UndefinedCorrelationError, Error, "undefined_correlation");
MSFPT_DEFINE_ERROR(IoError, Error, "io");
MSFPT_DEFINE_ERROR(ParseError, Error, "parse");

// File-format failures. Each has its own type so callers can tell a corrupt
// file from an incompatible one.
MSFPT_DEFINE_ERROR(FormatError, Error, "format");
MSFPT_DEFINE_ERROR(MagicError, FormatError, "bad_magic");
MSFPT_DEFINE_ERROR(VersionError, FormatError, "version");
MSFPT_DEFINE_ERROR(ChecksumError, FormatError, "checksum");
MSFPT_DEFINE_ERROR(TruncatedError, FormatError, "truncated");
MSFPT_DEFINE_ERROR(UnsupportedFormatError, FormatError, "unsupported_format");

#undef MSFPT_DEFINE_ERROR

}  // namespace msfpt
