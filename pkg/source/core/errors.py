class DimensionError(Exception):
    pass


class ContractError(Exception):
    pass


class DataError(Exception):
    pass


class IngestionError(Exception):
    pass


class SchemaError(Exception):
    pass


class UndefinedMetricError(Exception):
    pass


class CheckpointError(Exception):
    pass


class StageError(Exception):
    def __init__(self, stage: str, message: str):
        super().__init__(f"stage {stage} failed: {message}")
        self.stage = stage
