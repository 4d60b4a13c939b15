#include "promptseg/error.hpp"

// Anchors the vtables of the exception hierarchy in one translation unit.
namespace promptseg {}
