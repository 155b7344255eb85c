import os
from typing import Dict, List, Optional, Type, TypeVar

from dotenv import dotenv_values
from pydantic import BaseModel, ValidationError

from src.core.errors import ConfigError

ModelT = TypeVar("ModelT", bound=BaseModel)


def read_key_values(path: str) -> Dict[str, str]:
    """Read a flat key=value document; blank values are dropped"""
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    values = dotenv_values(path)
    return {key.strip(): value for key, value in values.items() if value is not None and value != ""}


def write_key_values(path: str, values: Dict[str, object]) -> None:
    lines = []
    for key, value in values.items():
        if isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key}={value}")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def build_model(model_cls: Type[ModelT], values: Dict[str, object], source: str = "config") -> ModelT:
    """Validate raw values into a pydantic model, converting failures to ConfigError"""
    unknown = sorted(set(values) - set(model_cls.model_fields))
    if unknown:
        raise ConfigError(f"unknown keys in {source}: {', '.join(unknown)}")
    try:
        return model_cls(**values)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}" for err in e.errors()
        )
        raise ConfigError(f"invalid {source}: {problems}") from e


def split_values(values: Dict[str, str], *model_classes: Type[BaseModel]) -> Dict[Type[BaseModel], Dict[str, str]]:
    """Route keys of one flat document to the model classes that declare them"""
    routed: Dict[Type[BaseModel], Dict[str, str]] = {cls: {} for cls in model_classes}
    unknown = []
    for key, value in values.items():
        for cls in model_classes:
            if key in cls.model_fields:
                routed[cls][key] = value
                break
        else:
            unknown.append(key)
    if unknown:
        raise ConfigError(f"unknown keys: {', '.join(sorted(unknown))}")
    return routed


def split_list(value: Optional[str]) -> List[str]:
    """Comma separated command-line value to a list; empty for None"""
    if not value:
        return []
    return [item.strip() for item in value.split(",") if item.strip()]
