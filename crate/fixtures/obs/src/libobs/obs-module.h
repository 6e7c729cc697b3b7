#pragma once

#include <stdbool.h>
#include <stddef.h>

typedef struct obs_module obs_module_t;

typedef bool (*obs_locale_lookup_t)(const char *key, const char **out);

struct obs_module {
	const char *name;
	obs_locale_lookup_t get_string;
	struct obs_module *next;
};

obs_module_t *obs_get_module(const char *name);
bool obs_module_get_locale_string(const obs_module_t *mod, const char *lookup_string,
				  const char **translated_string);
const char *obs_module_get_locale_text(const obs_module_t *mod, const char *text);
