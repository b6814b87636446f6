import os
import json


class JsonInputError(Exception):
    pass


def save_to_json(path, data_dict):
    with open(path ,"w", encoding = "utf-8") as f:
        json.dump(data_dict, f, ensure_ascii=False, indent=4, sort_keys=True,)
        f.write("\n")
    return path


def load_json(path):
    if not os.path.isfile(path):
        raise JsonInputError("{} Not Found".format(path))
    with open(path, 'r', encoding = "utf-8") as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as err:
            raise JsonInputError("{} is not valid JSON: {}".format(path, err))


def read_dose_map(path):
    '''
    Condition name -> concentration in uM, e.g. {"control": 0, "dose_01": 12.5}
    Sorted by condition name.
    '''
    data = load_json(path)
    if not isinstance(data, dict) or not data:
        raise JsonInputError("dose map {} must be a non-empty object".format(path))
    out = dict()
    for cond in sorted(data):
        try:
            conc = float(data[cond])
        except (TypeError, ValueError):
            raise JsonInputError("dose map entry {!r}: {!r} is not a number".format(cond, data[cond]))
        if conc < 0:
            raise JsonInputError("dose map entry {!r} is negative".format(cond))
        out[cond] = conc
    return out


def save_dose_map(path, dose_map):
    return save_to_json(path, {k: float(v) for k, v in dose_map.items()})
