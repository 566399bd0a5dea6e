from adlayout.client import ModelResponse


class Scripted:
    """Client stand-in that answers from a list and keeps the requests."""

    model = "scripted"
    concurrency = 1

    def __init__(self, *answers):
        self.answers = list(answers)
        self.requests = []

    def chat(self, request):
        self.requests.append(request)
        return ModelResponse(self.answers.pop(0))
