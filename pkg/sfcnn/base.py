from pydantic import BaseModel as PydanticBaseModel


class BaseModel(PydanticBaseModel):
    """Config and report schemas: unknown keys are rejected, dumps are JSON-ready."""

    class Config:
        extra = "forbid"

    def dump(self) -> dict:
        return self.model_dump(mode="json")
