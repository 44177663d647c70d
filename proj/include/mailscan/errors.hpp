#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mailscan {

// Base class for everything thrown by this library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A listing line that matches neither the instruction nor the label grammar.
class MalformedLineError : public Error {
public:
    MalformedLineError(std::size_t line, const std::string& detail)
        : Error("malformed line " + std::to_string(line) + ": " + detail), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class DuplicateAddressError : public Error {
public:
    explicit DuplicateAddressError(std::uint64_t address)
        : Error("duplicate instruction address 0x" + to_hex(address)), address_(address) {}
    std::uint64_t address() const noexcept { return address_; }

private:
    static std::string to_hex(std::uint64_t v) {
        static const char* digits = "0123456789abcdef";
        std::string s;
        do { s.insert(s.begin(), digits[v & 0xf]); v >>= 4; } while (v);
        return s;
    }
    std::uint64_t address_;
};

class EmptyProgramError : public Error {
public:
    EmptyProgramError() : Error("listing contains no instructions") {}
    using Error::Error;
};

class EmptyCorpusError : public Error {
public:
    EmptyCorpusError() : Error("corpus contains no statements") {}
    using Error::Error;
};

class StatementNotInGraphError : public Error {
public:
    StatementNotInGraphError() : Error("statement does not belong to any block of the graph") {}
};

class LengthMismatchError : public Error {
public:
    LengthMismatchError(std::size_t a, std::size_t b)
        : Error("index arrays differ in length: " + std::to_string(a) + " vs " + std::to_string(b)) {}
};

class EmptySignatureError : public Error {
public:
    EmptySignatureError() : Error("program signature holds no graphs") {}
};

class TooFewItemsError : public Error {
public:
    using Error::Error;
};

class SingleClassError : public Error {
public:
    SingleClassError() : Error("dataset holds only one label class") {}
    using Error::Error;
};

class CorruptDbError : public Error {
public:
    using Error::Error;
};

class IncompatibleDbVersionError : public Error {
public:
    explicit IncompatibleDbVersionError(std::uint32_t got, std::uint32_t want)
        : Error("database format version " + std::to_string(got) +
                " is not supported (expected " + std::to_string(want) + ")") {}
};

class NotApplicableError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

} // namespace mailscan
