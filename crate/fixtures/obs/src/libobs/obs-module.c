#include <string.h>

#include "obs-module.h"

static obs_module_t *first_module = NULL;

obs_module_t *obs_get_module(const char *name)
{
	obs_module_t *module = first_module;

	while (module) {
		if (strcmp(module->name, name) == 0)
			return module;
		module = module->next;
	}

	return NULL;
}

bool obs_module_get_locale_string(const obs_module_t *mod, const char *lookup_string,
				  const char **translated_string)
{
	if (!mod->get_string)
		return false;

	return mod->get_string(lookup_string, translated_string);
}

const char *obs_module_get_locale_text(const obs_module_t *mod, const char *text)
{
	const char *str = text;
	obs_module_get_locale_string(mod, text, &str);
	return str;
}
