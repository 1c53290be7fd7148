#pragma once

#define ACEKIT_VERSION "0.1.0"
