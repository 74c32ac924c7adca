"""HTTP layer: JSON API over the recognition engine, prototype log, and
taxonomy.  Errors map onto 400 (malformed), 403 (admin token), 404 (missing
resource), 409 (double validation), 422 (semantic rejects), 503 (empty store).
"""

from __future__ import annotations

import base64
import io
import json
import tarfile
import tempfile
import time
import uuid
from pathlib import Path

from fastapi import Depends, FastAPI, Header, HTTPException, Query, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, Response
from pydantic import BaseModel, Field

from .config import ServiceConfig
from .features import (
    EmbeddingManifest,
    FeatureError,
    RasterImage,
    RegionOfInterest,
    ingest_embedding,
    ycbcr_histogram,
)
from .ontology import (
    Taxonomy,
    UnknownSynset,
    closeness_message,
    default_taxonomy_path,
    load_taxonomy,
)
from .persistence import PrototypeLog, export_dataset, replay
from .recognition import (
    AlreadyValidated,
    ConfidenceThresholds,
    Prototype,
    RecognitionEngine,
    RecognitionError,
    RecognitionResponse,
    UnknownResponse,
    UnknownUser,
    UnknownPrototype,
)
from .vectors import DimensionMismatch, MetricMismatch, NonFinite, ZeroVector


class ImageBody(BaseModel):
    width: int = Field(gt=0)
    height: int = Field(gt=0)
    pixels_b64: str


class RoiBody(BaseModel):
    x: int = Field(ge=0)
    y: int = Field(ge=0)
    w: int = Field(gt=0)
    h: int = Field(gt=0)


class QueryBody(BaseModel):
    vector: list[float] | None = None
    image: ImageBody | None = None
    roi: RoiBody | None = None
    metadata: dict = Field(default_factory=dict)
    scope: str = "all"
    user_id: str | None = None
    rerank: bool | None = None


class ValidateBody(BaseModel):
    response_id: str
    decision: str
    synset: str | None = None


class PatchImageBody(BaseModel):
    user_label: str | None = None
    reliable: bool | None = None


def load_messages(path: str | Path | None) -> dict:
    p = Path(path) if path else Path(__file__).parent / "data" / "messages.json"
    return json.loads(p.read_text(encoding="utf-8"))


def build_engine(config: ServiceConfig, taxonomy: Taxonomy) -> RecognitionEngine:
    log = PrototypeLog(config.log_path)
    engine = RecognitionEngine(
        taxonomy,
        dim=config.dim,
        metric=config.metric,
        thresholds=ConfidenceThresholds(config.certain_threshold, config.unknown_threshold),
        k=config.k,
        rerank_gap=config.rerank_gap,
        n_trees=config.n_trees,
        max_nodes=config.max_nodes,
        leaf_capacity=config.leaf_capacity,
        seed=config.seed,
        log=log,
        token_ttl=config.token_ttl_hours * 3600.0,
    )
    state = log.state()
    if state:
        engine.load_state(state, rebuild=config.rebuild_on_start)
    return engine


def create_app(
    config: ServiceConfig | None = None,
    engine: RecognitionEngine | None = None,
    taxonomy: Taxonomy | None = None,
) -> FastAPI:
    config = config or ServiceConfig()
    taxonomy = taxonomy or load_taxonomy(config.taxonomy_path or default_taxonomy_path())
    engine = engine or build_engine(config, taxonomy)
    messages = load_messages(config.messages_path)
    manifest = EmbeddingManifest(config.embedding_source, config.dim, config.metric)

    app = FastAPI(title="protorec", version="0.1.0")
    app.state.engine = engine
    app.state.config = config
    app.state.taxonomy = taxonomy

    @app.exception_handler(RequestValidationError)
    async def malformed_body(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    def require_admin(authorization: str | None = Header(default=None)) -> None:
        expected = config.admin_token
        supplied = None
        if authorization and authorization.startswith("Bearer "):
            supplied = authorization[len("Bearer ") :]
        if expected is None or supplied != expected:
            raise HTTPException(status_code=403, detail="admin token required")

    def synset_payload(synset_id: str) -> dict:
        syn = taxonomy.get(synset_id)
        return {
            "class_synset": syn.synset_id,
            "lemma": syn.lemmas[0],
            "lemmas": list(syn.lemmas),
            "definition": syn.definition,
        }

    def response_payload(result: RecognitionResponse) -> dict:
        proposed = None
        if result.proposed is not None:
            proposed = synset_payload(result.proposed.class_synset)
            proposed["distance"] = result.proposed.distance
            proposed["user_label"] = result.proposed.user_label
        return {
            "response_id": result.response_id,
            "outcome": {"kind": result.outcome.kind, "level": result.outcome.level},
            "message": messages["confidence"][result.outcome.key],
            "proposed": proposed,
            "alternatives": [synset_payload(c) for c in result.alternatives],
            "hits": [
                {"prototype_id": h.prototype_id, "distance": h.distance}
                for h in result.hits
            ],
        }

    def prototype_payload(proto: Prototype) -> dict:
        return {
            "id": proto.id,
            "class_synset": proto.class_synset,
            "user_id": proto.user_id,
            "timestamp": proto.timestamp,
            "reliable": proto.reliable,
            "user_label": proto.user_label,
        }

    @app.post("/query")
    def query(body: QueryBody):
        if (body.vector is None) == (body.image is None):
            raise HTTPException(400, "provide exactly one of vector or image")
        try:
            if body.vector is not None:
                descriptor = ingest_embedding(body.vector, manifest, normalize=config.l2)
            else:
                assert body.image is not None
                if body.roi is None:
                    raise HTTPException(400, "image queries require a roi")
                raw = base64.b64decode(body.image.pixels_b64)
                if len(raw) > config.max_image_bytes:
                    raise HTTPException(400, "image exceeds the configured size cap")
                img = RasterImage.from_bytes(raw, body.image.width, body.image.height)
                roi = RegionOfInterest(body.roi.x, body.roi.y, body.roi.w, body.roi.h)
                descriptor = ycbcr_histogram(img, roi)
        except (DimensionMismatch, MetricMismatch, NonFinite, ZeroVector) as exc:
            raise HTTPException(422, str(exc)) from exc
        except FeatureError as exc:
            raise HTTPException(400, str(exc)) from exc

        if engine.prototype_count == 0:
            raise HTTPException(503, "the prototype store is empty")

        roi_obj = (
            RegionOfInterest(body.roi.x, body.roi.y, body.roi.w, body.roi.h)
            if body.roi
            else None
        )
        rerank = config.rerank if body.rerank is None else body.rerank
        try:
            result = engine.classify(
                descriptor,
                qmeta=body.metadata,
                scope=body.scope,
                user=body.user_id,
                roi=roi_obj,
                rerank=rerank,
            )
        except UnknownUser:
            result = engine.unknown_response(descriptor, body.metadata, body.user_id, roi_obj)
        except DimensionMismatch as exc:
            raise HTTPException(422, str(exc)) from exc
        except RecognitionError as exc:
            raise HTTPException(400, str(exc)) from exc
        return response_payload(result)

    @app.post("/validate")
    def validate(body: ValidateBody):
        try:
            predicted = engine.proposed_for(body.response_id)
            proto = engine.validate(body.response_id, body.decision, body.synset)
        except UnknownResponse as exc:
            raise HTTPException(404, str(exc)) from exc
        except AlreadyValidated as exc:
            raise HTTPException(409, str(exc)) from exc
        except UnknownSynset as exc:
            raise HTTPException(422, str(exc)) from exc
        except RecognitionError as exc:
            raise HTTPException(422, str(exc)) from exc
        if proto is None:
            return {"prototype_id": None, "closeness": None, "message": None}
        closeness = None
        if predicted is not None:
            depth = taxonomy.common_ancestor_depth(predicted, proto.class_synset)
            closeness = closeness_message(depth, taxonomy.depth(predicted))
        return {
            "prototype_id": proto.id,
            "class_synset": proto.class_synset,
            "closeness": closeness,
            "message": messages["closeness"].get(closeness) if closeness else None,
        }

    @app.get("/images")
    def list_images(user: str = Query(...)):
        return [prototype_payload(p) for p in engine.user_prototypes(user)]

    @app.patch("/images/{prototype_id}")
    def patch_image(
        prototype_id: int,
        body: PatchImageBody,
        authorization: str | None = Header(default=None),
    ):
        try:
            if body.reliable is not None:
                require_admin(authorization)
                engine.admin_flag(prototype_id, body.reliable)
            if body.user_label is not None:
                engine.set_label(prototype_id, body.user_label)
            return prototype_payload(engine.get_prototype(prototype_id))
        except UnknownPrototype as exc:
            raise HTTPException(404, str(exc)) from exc

    @app.get("/export")
    def export(reliable_only: bool = Query(default=False)):
        store = {p.id: p for p in engine.prototypes()}
        with tempfile.TemporaryDirectory() as tmp:
            out = Path(tmp) / "dataset"
            export_dataset(
                store,
                out,
                taxonomy_path=config.taxonomy_path or default_taxonomy_path(),
                reliable_only=reliable_only,
                source_name=config.embedding_source,
            )
            buf = io.BytesIO()
            with tarfile.open(fileobj=buf, mode="w:gz") as archive:
                archive.add(out, arcname="dataset")
            return Response(
                content=buf.getvalue(),
                media_type="application/gzip",
                headers={"Content-Disposition": "attachment; filename=dataset.tar.gz"},
            )

    @app.post("/admin/rebuild")
    def rebuild(_: None = Depends(require_admin)):
        drained = engine.rebuild_index()
        snapshot_id = f"{int(time.time())}-{uuid.uuid4().hex[:8]}"
        snap_dir = Path(config.snapshot_dir)
        snap_dir.mkdir(parents=True, exist_ok=True)
        engine.save_index_snapshot(str(snap_dir / f"{snapshot_id}.annf"))
        return {"snapshot_id": snapshot_id, "drained": drained}

    @app.get("/taxonomy/search")
    def taxonomy_search(lemma: str = Query(...)):
        return [
            {"synset_id": sid, "definition": definition, "lemmas": list(taxonomy.get(sid).lemmas)}
            for sid, definition in taxonomy.lookup_lemma(lemma)
        ]

    @app.get("/messages")
    def get_messages():
        return messages

    return app


def run(config_path: str | None = None, host: str = "127.0.0.1", port: int = 8000) -> None:
    import uvicorn

    config = ServiceConfig.load(config_path)
    uvicorn.run(create_app(config), host=host, port=port)
