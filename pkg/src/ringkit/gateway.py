"""Console gateway: exposes the host SDK over HTTP + one streaming WebSocket.

The gateway owns a virtual environment and paces it against the wall clock so
live sessions render in real time.  It adds no state beyond connection
bookkeeping; anything a client sees is derived from hostkit objects.
Endpoints, message schema and error codes are documented in API.md.
"""

from __future__ import annotations

import asyncio
import time
from contextlib import asynccontextmanager
from dataclasses import asdict
from pathlib import Path

from fastapi import Body, FastAPI, Query, WebSocket, WebSocketDisconnect
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from ringkit import hostkit
from ringkit.hostkit import HostError, Session
from ringkit.transport import Environment, Link, TransportError

US = 1_000_000

PACE_TICK_S = 0.010
FRAME_QUEUE_LIMIT = 256

KIND_DEVICE_LIST = "DeviceList"
KIND_DASHBOARD = "Dashboard"
KIND_CALIB_REPORT = "CalibReport"
KIND_RENDER_FRAME = "RenderFrame"
KIND_HR_UPDATE = "HrUpdate"
KIND_ANNOTATION_ACK = "AnnotationAck"
KIND_OFFLINE_STATUS = "OfflineStatus"
KIND_FILE_LIST = "FileList"
KIND_FETCH_PROGRESS = "FetchProgress"
KIND_ERROR = "Error"


class _WsClient:
    """One streaming subscriber with drop-oldest-frame backpressure."""

    def __init__(self):
        self.queue: list[dict] = []
        self.wakeup = asyncio.Event()
        self.dropped_frames = 0

    def push(self, message: dict) -> None:
        if len(self.queue) >= FRAME_QUEUE_LIMIT:
            for i, queued in enumerate(self.queue):
                if queued["kind"] == KIND_RENDER_FRAME:
                    del self.queue[i]
                    self.dropped_frames += 1
                    break
            else:
                pass    # only undroppable kinds queued; let it grow
        self.queue.append(message)
        self.wakeup.set()


class GatewayState:
    def __init__(self, env: Environment):
        self.env = env
        self.lock = asyncio.Lock()
        self.links: dict[str, Link] = {}
        self.sessions: dict[str, Session] = {}
        self.clients: list[_WsClient] = []
        self.seq = 0
        self.operator: str | None = None
        self.started_wall = time.monotonic()
        self._paced_until = 0.0

    # ------------------------------------------------------------ messages

    def broadcast(self, kind: str, body: dict) -> None:
        self.seq += 1
        message = {"kind": kind, "seq": self.seq,
                   "server_ts_us": self.env.host_epoch_us(), "body": body}
        for client in list(self.clients):
            client.push(message)

    # ------------------------------------------------------------ pacing

    def pace(self) -> None:
        """Advance virtual time to track the wall clock (monotone, no rewinds)."""
        elapsed = time.monotonic() - self.started_wall
        dt = elapsed - self._paced_until
        if dt > 0:
            self._paced_until = elapsed
            self.env.run_for(round(dt * US))

    # ------------------------------------------------------------ plumbing

    def link_for(self, mac: str) -> Link:
        link = self.links.get(mac)
        if link is None or not link.connected:
            link = self.env.connect(mac)
            self.links[mac] = link
        return link

    def attach_session(self, mac: str, session: Session) -> None:
        self.sessions[mac] = session
        session.frame_observers.append(
            lambda frame: self.broadcast(KIND_RENDER_FRAME,
                                         {"mac": mac, **asdict(frame)}))
        session.metric_observers.append(
            lambda hr, activity: self.broadcast(KIND_HR_UPDATE, {
                "mac": mac,
                "bpm": hr.bpm if hr else None,
                "confidence": hr.confidence if hr else None,
                "activity_count": activity,
            }))


def _error_response(exc: Exception, status: int = 409) -> JSONResponse:
    return JSONResponse(status_code=status,
                        content={"error": type(exc).__name__, "message": str(exc)})


def create_app(env: Environment, *, static_dir: str | Path | None = None) -> FastAPI:
    state = GatewayState(env)

    @asynccontextmanager
    async def lifespan(_app: FastAPI):
        state.started_wall = time.monotonic()
        state._paced_until = 0.0

        async def pacer():
            while True:
                await asyncio.sleep(PACE_TICK_S)
                async with state.lock:
                    state.pace()

        task = asyncio.create_task(pacer())
        yield
        task.cancel()

    app = FastAPI(title="ringkit gateway", lifespan=lifespan)
    app.state.gateway = state

    def require_operator(token: str | None) -> None:
        if state.operator is None or token != state.operator:
            raise PermissionError("operator role required (claim it first)")

    # ------------------------------------------------------------ operator

    @app.post("/operator/claim")
    async def claim(body: dict = Body(default={})):
        client_id = str(body.get("client_id", "console"))
        async with state.lock:
            if state.operator is not None and state.operator != client_id:
                return _error_response(PermissionError("operator role is held"), 409)
            state.operator = client_id
            return {"token": client_id}

    @app.post("/operator/release")
    async def release(body: dict = Body(default={})):
        async with state.lock:
            if state.operator == body.get("token"):
                state.operator = None
            return {"ok": True}

    # ------------------------------------------------------------ queries

    @app.get("/devices")
    async def devices(duration_s: float = Query(default=0.2)):
        async with state.lock:
            found = hostkit.discover(state.env, duration_s)
            body = {"devices": [asdict(a) for a in found]}
            state.broadcast(KIND_DEVICE_LIST, body)
            return body

    @app.get("/dashboard")
    async def dashboard(mac: str):
        async with state.lock:
            try:
                d = hostkit.device_info(state.link_for(mac))
            except (TransportError, HostError) as exc:
                return _error_response(exc)
            body = asdict(d)
            body["mode"] = d.mode.name.lower()
            state.broadcast(KIND_DASHBOARD, body)
            return body

    @app.get("/files")
    async def files(mac: str):
        async with state.lock:
            try:
                entries = hostkit.list_files(state.link_for(mac))
            except (TransportError, HostError) as exc:
                return _error_response(exc)
            body = {"mac": mac, "files": [asdict(e) for e in entries]}
            state.broadcast(KIND_FILE_LIST, body)
            return body

    # ------------------------------------------------------------ actions

    @app.post("/connect")
    async def connect(body: dict = Body(...)):
        async with state.lock:
            try:
                link = state.link_for(str(body["mac"]))
            except (TransportError, KeyError) as exc:
                return _error_response(exc)
            return {"mac": link.mac, "connected": link.connected}

    @app.post("/calibrate")
    async def calibrate(body: dict = Body(...)):
        async with state.lock:
            try:
                require_operator(body.get("token"))
                report = hostkit.calibrate(state.link_for(str(body["mac"])))
            except (TransportError, HostError, PermissionError) as exc:
                return _error_response(exc)
            out = report.to_dict()
            state.broadcast(KIND_CALIB_REPORT, {"mac": body["mac"], **out})
            return out

    @app.post("/session/start")
    async def session_start(body: dict = Body(...)):
        async with state.lock:
            mac = str(body["mac"])
            try:
                require_operator(body.get("token"))
                link = state.link_for(mac)
                session = hostkit.start_session(link, **body.get("config", {}))
            except (TransportError, HostError, PermissionError, TypeError) as exc:
                return _error_response(exc)
            state.attach_session(mac, session)
            return {"mac": mac, "session": session.session_id or "pending"}

    @app.post("/session/stop")
    async def session_stop(body: dict = Body(...)):
        async with state.lock:
            mac = str(body["mac"])
            session = state.sessions.pop(mac, None)
            if session is None:
                return _error_response(KeyError(f"no session on {mac}"), 404)
            try:
                require_operator(body.get("token"))
                hostkit.stop_session(state.links[mac], session)
            except (TransportError, HostError, PermissionError) as exc:
                return _error_response(exc)
            out_dir = body.get("export_dir")
            if out_dir:
                hostkit.export_session(session, out_dir,
                                       fmt=body.get("export_format", "csv"))
            gaps = [list(g) for g in session.gaps]
            return {"mac": mac, "records": len(session.samples), "gaps": gaps,
                    "annotations": len(session.annotations)}

    @app.post("/annotate")
    async def annotate(body: dict = Body(...)):
        async with state.lock:
            mac = str(body["mac"])
            session = state.sessions.get(mac)
            if session is None:
                return _error_response(KeyError(f"no session on {mac}"), 404)
            try:
                require_operator(body.get("token"))
            except PermissionError as exc:
                return _error_response(exc)
            ann = hostkit.annotate(session, str(body.get("tag", "mark")))
            ack = {"mac": mac, "device_time_us": ann.device_time_us, "tag": ann.tag}
            state.broadcast(KIND_ANNOTATION_ACK, ack)
            return ack

    @app.post("/offline")
    async def offline(body: dict = Body(...)):
        async with state.lock:
            try:
                require_operator(body.get("token"))
                planned = hostkit.configure_offline(
                    state.link_for(str(body["mac"])),
                    int(body["total_s"]), int(body["segment_s"]),
                    start_delay_s=int(body.get("start_delay_s", 1)))
            except (TransportError, HostError, PermissionError) as exc:
                return _error_response(exc)
            out = {"mac": body["mac"], "planned_segments": planned}
            state.broadcast(KIND_OFFLINE_STATUS, out)
            return out

    @app.post("/fetch")
    async def fetch(body: dict = Body(...)):
        async with state.lock:
            mac = str(body["mac"])
            file_id = int(body["file_id"])

            def on_progress(done, total):
                state.broadcast(KIND_FETCH_PROGRESS, {
                    "mac": mac, "file_id": file_id,
                    "done": done, "total": total,
                    "pct": round(100.0 * done / total, 1)})

            try:
                require_operator(body.get("token"))
                payload, records = hostkit.fetch_file(
                    state.link_for(mac), file_id, progress=on_progress)
            except (TransportError, HostError, PermissionError) as exc:
                state.broadcast(KIND_ERROR,
                                {"code": type(exc).__name__, "message": str(exc)})
                return _error_response(exc)
            out_dir = body.get("out_dir")
            if out_dir:
                entries = {e.file_id: e for e in
                           hostkit.list_files(state.link_for(mac))}
                hostkit.save_log_segment(out_dir, entries[file_id], payload)
            return {"mac": mac, "file_id": file_id, "size": len(payload),
                    "records": len(records), "crc_ok": True}

    # ------------------------------------------------------------ stream

    @app.websocket("/ws")
    async def ws(websocket: WebSocket):
        await websocket.accept()
        client = _WsClient()
        state.clients.append(client)
        try:
            while True:
                if not client.queue:
                    client.wakeup.clear()
                    await client.wakeup.wait()
                while client.queue:
                    await websocket.send_json(client.queue.pop(0))
        except (WebSocketDisconnect, RuntimeError):
            pass
        finally:
            if client in state.clients:
                state.clients.remove(client)

    if static_dir and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="console")

    return app
